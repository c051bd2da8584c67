/**
 * Versioned WebSocket message schema shared with the bridge.
 *
 * Client -> server:  input (pose delta), clutch, hold — all carry `v`.
 * Server -> client:  robot | wrench | haptic | cloud | metrics.
 * Unknown or malformed server messages parse to null and are counted by the
 * caller; they must never throw into the event loop.
 */

import { z } from "zod";

export const SCHEMA_VERSION = 1;

const vec3 = z.tuple([z.number(), z.number(), z.number()]);
const quat = z.tuple([z.number(), z.number(), z.number(), z.number()]);

export const robotMsg = z.object({
  v: z.literal(SCHEMA_VERSION),
  type: z.literal("robot"),
  t: z.number(),
  q: z.array(z.number()),
  tool_p: vec3,
  tool_q: quat,
  desired_p: vec3,
  desired_q: quat,
  clutch: z.boolean(),
  hold: z.boolean(),
  watchdog: z.boolean(),
});

export const wrenchMsg = z.object({
  v: z.literal(SCHEMA_VERSION),
  type: z.literal("wrench"),
  force: vec3,
  torque: vec3,
  in_contact: z.boolean(),
});

export const hapticMsg = z.object({
  v: z.literal(SCHEMA_VERSION),
  type: z.literal("haptic"),
  t: z.number(),
  pattern: z.enum(["impulse", "cyclic"]),
  intensity: z.number().min(0).max(1),
});

export const cloudMsg = z.object({
  v: z.literal(SCHEMA_VERSION),
  type: z.literal("cloud"),
  camera: z.number().int().nonnegative(),
  stride: z.number().int().positive(),
  points: z.array(vec3),
});

export const metricsMsg = z.object({
  v: z.literal(SCHEMA_VERSION),
  type: z.literal("metrics"),
  t: z.number(),
  unknown_messages: z.number(),
  bad_messages: z.number(),
  haptic_events: z.number(),
});

export const serverMsg = z.discriminatedUnion("type", [
  robotMsg,
  wrenchMsg,
  hapticMsg,
  cloudMsg,
  metricsMsg,
]);

export type RobotMsg = z.infer<typeof robotMsg>;
export type WrenchMsg = z.infer<typeof wrenchMsg>;
export type HapticMsg = z.infer<typeof hapticMsg>;
export type CloudMsg = z.infer<typeof cloudMsg>;
export type MetricsMsg = z.infer<typeof metricsMsg>;
export type ServerMsg = z.infer<typeof serverMsg>;

/** Parse one server payload; unknown types or bad shapes yield null. */
export function parseServerMessage(raw: unknown): ServerMsg | null {
  const res = serverMsg.safeParse(raw);
  if (!res.success) {
    console.warn("ignoring unrecognized server message", raw);
    return null;
  }
  return res.data;
}

export interface InputMsg {
  v: typeof SCHEMA_VERSION;
  type: "input";
  dp: [number, number, number];
  drot?: [number, number, number];
}

export interface ButtonMsg {
  v: typeof SCHEMA_VERSION;
  type: "clutch" | "hold";
  pressed: boolean;
}

export type ClientMsg = InputMsg | ButtonMsg;

export function inputMessage(
  dp: [number, number, number],
  drot?: [number, number, number],
): InputMsg {
  return drot === undefined
    ? { v: SCHEMA_VERSION, type: "input", dp }
    : { v: SCHEMA_VERSION, type: "input", dp, drot };
}

export function clutchMessage(pressed: boolean): ButtonMsg {
  return { v: SCHEMA_VERSION, type: "clutch", pressed };
}

export function holdMessage(pressed: boolean): ButtonMsg {
  return { v: SCHEMA_VERSION, type: "hold", pressed };
}
