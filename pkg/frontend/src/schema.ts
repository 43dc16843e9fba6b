/**
 * Wire shapes of the verification service, mirrored as zod schemas.
 *
 * Every payload the console sends is validated against these before it
 * leaves the client, and every response is validated on arrival, so a
 * drifting server shows up as a loud schema error instead of a blank
 * screen.
 */

import { z } from "zod";

export const BBox = z.tuple([z.number(), z.number(), z.number(), z.number()]);
export type BBox = z.infer<typeof BBox>;

export const TagFilterPayload = z.object({
  candidates: z.array(z.string()),
  image_ref: z.string(),
  bbox: BBox,
});
export type TagFilterPayload = z.infer<typeof TagFilterPayload>;

export const VqaPayload = z.object({
  q: z.string(),
  a: z.string(),
  image_ref: z.string(),
  bbox: BBox,
  stage: z.union([z.literal(1), z.literal(2)]),
  qa_index: z.number().int().nonnegative(),
});
export type VqaPayload = z.infer<typeof VqaPayload>;

export const TaskState = z.enum([
  "pending", "leased", "submitted", "reviewed", "requeued",
]);

export const Lease = z.object({
  worker_id: z.string(),
  expires_at: z.number(),
}).nullable();

const taskCommon = {
  task_id: z.string(),
  region_id: z.string(),
  state: TaskState,
  lease: Lease,
  result: z.record(z.string(), z.unknown()).nullable(),
  package_id: z.string().nullable(),
};

export const Task = z.discriminatedUnion("kind", [
  z.object({ kind: z.literal("tag_filter"), payload: TagFilterPayload, ...taskCommon }),
  z.object({ kind: z.literal("vqa_check"), payload: VqaPayload, ...taskCommon }),
]);
export type Task = z.infer<typeof Task>;

export const VqaOutcome = z.enum([
  "correct", "wrong_answer", "unanswerable", "wrong_semantic",
]);
export type VqaOutcome = z.infer<typeof VqaOutcome>;

export const TagFilterResult = z.object({
  selected: z.array(z.string()),
});
export type TagFilterResult = z.infer<typeof TagFilterResult>;

export const VqaStage1Result = z.object({
  outcome: VqaOutcome,
  correction: z.string().optional(),
}).refine(r => r.outcome === "wrong_answer" || r.correction === undefined, {
  message: "correction text only accompanies wrong_answer",
});
export type VqaStage1Result = z.infer<typeof VqaStage1Result>;

export const CorrectionResult = z.object({
  correction: z.string().refine(s => s.trim().length > 0, {
    message: "correction must not be empty",
  }),
});
export type CorrectionResult = z.infer<typeof CorrectionResult>;

export type SubmitResult = TagFilterResult | VqaStage1Result | CorrectionResult;

/** Schema the service will hold this task's result to. */
export function resultSchemaFor(task: Task): z.ZodType<SubmitResult> {
  if (task.kind === "tag_filter") {
    const shown = new Set(task.payload.candidates);
    return TagFilterResult.refine(
      r => r.selected.every(s => shown.has(s)),
      { message: "selected tags must come from the shown candidates" },
    );
  }
  if (task.payload.stage === 2) return CorrectionResult;
  return VqaStage1Result;
}

export const SubmitRequest = z.object({
  worker_id: z.string(),
  result: z.record(z.string(), z.unknown()),
});
export type SubmitRequest = z.infer<typeof SubmitRequest>;

export const SubmitResponse = z.object({
  acknowledged: z.literal(true),
  task: Task,
});
export type SubmitResponse = z.infer<typeof SubmitResponse>;

export const PackageState = z.enum(["open", "passed", "failed"]);

export const ReviewPackage = z.object({
  package_id: z.string(),
  task_ids: z.array(z.string()),
  state: PackageState,
  expert_id: z.string().nullable(),
  accuracy: z.number().nullable(),
});
export type ReviewPackage = z.infer<typeof ReviewPackage>;

export const OpenPackages = z.object({
  packages: z.array(ReviewPackage),
});

export const QAItem = z.object({
  q: z.string(),
  a: z.string(),
  status: z.string(),
});

export const RegionContext = z.object({
  region_id: z.string(),
  image_ref: z.string(),
  bbox: BBox,
  candidates: z.array(z.string()),
  caption: z.string(),
  qa: z.array(QAItem),
  verification_state: z.string(),
});
export type RegionContext = z.infer<typeof RegionContext>;

export const Metrics = z.union([
  z.object({
    empty: z.literal(true),
    states: z.record(z.string(), z.number()),
  }),
  z.object({
    empty: z.literal(false),
    states: z.record(z.string(), z.number()),
    tag_filter_tasks: z.number(),
    vqa_tasks: z.number(),
    top1_accuracy: z.number().nullable(),
    tag_accuracy: z.number().nullable(),
    vqa_outcome_fractions: z.record(z.string(), z.number().nullable()),
    vqa_outcome_counts: z.record(z.string(), z.number()),
  }),
]);
export type Metrics = z.infer<typeof Metrics>;

export const ErrorBody = z.object({
  error: z.object({
    type: z.string(),
    message: z.string(),
  }),
});
export type ErrorBody = z.infer<typeof ErrorBody>;
