/**
 * Wire schemas for the annotation service.
 *
 * Every response passes through these validators before the rest of the
 * app sees it, so a drifting backend fails loudly at the boundary instead
 * of corrupting canvas state.
 */
import { z } from "zod";

export const PoseSchema = z.object({
  theta: z.number(),
  phi: z.number(),
  psi: z.number(),
  x: z.number(),
  y: z.number(),
  z: z.number(),
});

export const Point2Schema = z.tuple([z.number(), z.number()]);
export const Point3Schema = z.tuple([z.number(), z.number(), z.number()]);

export const AnnotationSetSchema = z.object({
  points: z.array(Point2Schema),
  visibility: z.array(z.boolean()),
});

export const RecordSchema = z.object({
  id: z.string(),
  image_path: z.string(),
  mask_path: z.string(),
  model_path: z.string(),
  category: z.string(),
  image_size: z.tuple([z.number().int().positive(), z.number().int().positive()]),
  keypoints_3d: z.array(Point3Schema).min(1),
  keypoint_annotations: z.array(AnnotationSetSchema).min(1).max(3),
  pose: PoseSchema.nullable(),
  focal: z.number().nullable(),
  truncated: z.boolean(),
  occluded: z.boolean(),
  version: z.number().int().min(0),
  image_url: z.string(),
  mask_url: z.string(),
  model_url: z.string(),
});

export const SolutionSchema = z.object({
  pose: PoseSchema,
  focal: z.number(),
  error: z.number(),
  method: z.string(),
  // (keypoint index, annotator index) pairs, present for ransac only
  inliers: z.array(z.tuple([z.number().int(), z.number().int()])).optional(),
});

export const SolveResponseSchema = z.object({
  solution: SolutionSchema,
  projected: z.array(Point2Schema),
  residuals: z.array(z.number().nullable()),
  outline: z.array(z.array(Point2Schema)),
  record_version: z.number().int(),
});

export const CommitResponseSchema = z.object({
  record: RecordSchema,
});

export const ErrorBodySchema = z.object({
  code: z.string(),
  message: z.string(),
});

export type Pose = z.infer<typeof PoseSchema>;
export type Point2 = z.infer<typeof Point2Schema>;
export type AnnotationSet = z.infer<typeof AnnotationSetSchema>;
export type RecordPayload = z.infer<typeof RecordSchema>;
export type SolutionPayload = z.infer<typeof SolutionSchema>;
export type SolveResponse = z.infer<typeof SolveResponseSchema>;
export type ErrorBody = z.infer<typeof ErrorBodySchema>;

/** Request bodies are built locally, so plain interfaces are enough. */
export interface KeypointSetBody {
  points: [number, number][];
  visibility?: boolean[];
}

export interface SolveRequest {
  method: string;
  keypoints_2d?: KeypointSetBody[];
  config?: Record<string, unknown>;
}

export interface CommitRequest {
  expected_version: number;
  keypoints_2d?: KeypointSetBody[];
}
