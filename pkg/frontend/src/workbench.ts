/**
 * Annotator workbench.
 *
 * Leases one task at a time, renders it with the region box drawn over
 * the image frame, and submits the annotator's judgment. Drafts live in
 * the DOM only: nothing is persisted client-side, so a failed submit
 * leaves the form exactly as it was and a successful one moves on to the
 * next lease.
 *
 * Keyboard: digits toggle candidate chips, Q/W/E/R pick the answer
 * outcome. Keys are ignored while focus is in a text field.
 */

import type { Api } from "./api.js";
import { ApiError } from "./api.js";
import { clear, el, Scheduler, windowScheduler } from "./dom.js";
import { overlayStyle } from "./overlay.js";
import {
  RegionContext, resultSchemaFor, SubmitResult, Task, VqaOutcome,
} from "./schema.js";

const OUTCOMES: Array<{ key: string; outcome: VqaOutcome; label: string }> = [
  { key: "Q", outcome: "correct", label: "Correct" },
  { key: "W", outcome: "wrong_answer", label: "Wrong answer" },
  { key: "E", outcome: "unanswerable", label: "Not answerable here" },
  { key: "R", outcome: "wrong_semantic", label: "Question does not fit" },
];

const DEFAULT_POLL_MS = 5000;

export interface WorkbenchOptions {
  api: Api;
  root: HTMLElement;
  workerId: string;
  /** Restrict leases to one task kind. */
  kind?: "tag_filter" | "vqa_check";
  /** Idle re-poll interval. */
  pollMs?: number;
  /** Injectable for tests; defaults to window timers. */
  schedule?: Scheduler;
}

interface CurrentWork {
  task: Task;
  context: RegionContext | null;
}

export class Workbench {
  private readonly api: Api;
  private readonly root: HTMLElement;
  private readonly doc: Document;
  private readonly workerId: string;
  private readonly kind?: "tag_filter" | "vqa_check";
  private readonly pollMs: number;
  private readonly schedule: Scheduler;
  private readonly onKey: (ev: Event) => void;

  private current: CurrentWork | null = null;
  private cancelPoll: (() => void) | null = null;
  private inflight: Promise<void> = Promise.resolve();

  constructor(opts: WorkbenchOptions) {
    this.api = opts.api;
    this.root = opts.root;
    this.doc = opts.root.ownerDocument;
    this.workerId = opts.workerId;
    this.kind = opts.kind;
    this.pollMs = opts.pollMs ?? DEFAULT_POLL_MS;
    this.schedule = opts.schedule ?? windowScheduler(this.doc);
    this.onKey = ev => this.handleKey(ev as KeyboardEvent);
    this.doc.addEventListener("keydown", this.onKey);
  }

  start(): Promise<void> {
    return this.track(() => this.leaseNext());
  }

  /** Resolves once every operation queued so far has finished. */
  settle(): Promise<void> {
    return this.inflight;
  }

  currentTask(): Task | null {
    return this.current?.task ?? null;
  }

  dispose(): void {
    this.doc.removeEventListener("keydown", this.onKey);
    this.cancelPoll?.();
    this.cancelPoll = null;
  }

  private track(op: () => Promise<void>): Promise<void> {
    this.inflight = this.inflight.then(op).catch(err => {
      console.error("workbench:", err);
      this.banner("error", String(err instanceof Error ? err.message : err));
    });
    return this.inflight;
  }

  // -- leasing -----------------------------------------------------------

  private async leaseNext(): Promise<void> {
    this.cancelPoll?.();
    this.cancelPoll = null;
    let task: Task | null;
    try {
      task = await this.api.lease(this.workerId, this.kind);
    } catch (err) {
      this.renderIdle("Could not reach the service; retrying shortly. " +
        `(${err instanceof Error ? err.message : err})`);
      return;
    }
    if (task === null) {
      this.current = null;
      this.renderIdle();
      return;
    }
    const context = await this.api.regionContext(task.region_id).catch(() => null);
    this.current = { task, context };
    this.renderTask();
  }

  private async release(): Promise<void> {
    if (!this.current) return this.leaseNext();
    const previousId = this.current.task.task_id;
    let task: Task | null;
    try {
      task = await this.api.lease(this.workerId, this.kind);
    } catch (err) {
      this.banner("warn", "Service still unreachable; your work is kept here.",
        [{ id: "re-lease", label: "Re-lease", onClick: () => this.track(() => this.release()) }]);
      return;
    }
    if (task && task.task_id === previousId) {
      // Same task came back: leave the form untouched, just refresh the lease.
      this.current.task = task;
      this.updateLeaseNote();
      this.banner("info", "Re-leased. Pick up where you left off.");
      return;
    }
    if (task) {
      const context = await this.api.regionContext(task.region_id).catch(() => null);
      this.current = { task, context };
      this.renderTask();
      this.banner("info", "The previous task went to another worker; here is the next one.");
      return;
    }
    this.current = null;
    this.renderIdle("The previous task went to another worker and nothing else is pending.");
  }

  // -- submitting ---------------------------------------------------------

  private async submitCurrent(): Promise<void> {
    if (!this.current) return;
    const result = this.collectResult();
    if (result === null) return;
    const checked = resultSchemaFor(this.current.task).safeParse(result);
    if (!checked.success) {
      this.banner("error", checked.error.issues[0]?.message ?? "invalid input");
      return;
    }
    try {
      await this.api.submit(this.current.task.task_id, this.workerId, checked.data);
    } catch (err) {
      this.handleSubmitError(err);
      return;
    }
    this.current = null;
    await this.leaseNext();
  }

  private handleSubmitError(err: unknown): void {
    if (err instanceof ApiError && err.status === 409) {
      this.banner("warn",
        "Your lease on this task lapsed before the submit landed. " +
        "Nothing was lost; re-lease to try again.",
        [{ id: "re-lease", label: "Re-lease", onClick: () => this.track(() => this.release()) }]);
      return;
    }
    if (err instanceof ApiError) {
      this.banner("error", `${err.type}: ${err.message}`);
      return;
    }
    this.banner("warn",
      "Could not reach the service. Your work is kept here; retry when the connection is back.",
      [{ id: "retry-submit", label: "Retry", onClick: () => this.track(() => this.submitCurrent()) }]);
  }

  /** Read the draft out of the DOM. Returns null (and explains) if incomplete. */
  private collectResult(): SubmitResult | null {
    const task = this.current!.task;
    if (task.kind === "tag_filter") {
      const chips = this.root.querySelectorAll<HTMLButtonElement>(".chip.selected");
      const selected = Array.from(chips, c => c.dataset.text ?? "");
      return { selected };
    }
    if (task.payload.stage === 2) {
      return { correction: this.correctionText() };
    }
    const picked = this.root.querySelector<HTMLButtonElement>(".outcome.selected");
    if (!picked) {
      this.banner("warn", "Pick one of the four outcomes first.");
      return null;
    }
    const outcome = picked.dataset.outcome as VqaOutcome;
    const correction = this.correctionText();
    if (outcome === "wrong_answer" && correction) return { outcome, correction };
    return { outcome };
  }

  private correctionText(): string {
    const box = this.root.querySelector<HTMLTextAreaElement>("#correction");
    return box ? box.value.trim() : "";
  }

  // -- keyboard -----------------------------------------------------------

  private handleKey(ev: KeyboardEvent): void {
    const target = ev.target as HTMLElement | null;
    if (target && (target.tagName === "TEXTAREA" || target.tagName === "INPUT")) return;
    if (!this.current) return;
    const task = this.current.task;
    if (task.kind === "tag_filter" && /^[1-9]$/.test(ev.key)) {
      this.toggleChip(Number(ev.key) - 1);
      return;
    }
    if (task.kind === "vqa_check" && task.payload.stage === 1) {
      const hit = OUTCOMES.find(o => o.key === ev.key.toUpperCase());
      if (hit) this.selectOutcome(hit.outcome);
    }
  }

  private toggleChip(index: number): void {
    const chips = this.root.querySelectorAll<HTMLButtonElement>(".chip");
    chips[index]?.classList.toggle("selected");
  }

  private selectOutcome(outcome: VqaOutcome): void {
    for (const btn of this.root.querySelectorAll<HTMLButtonElement>(".outcome")) {
      btn.classList.toggle("selected", btn.dataset.outcome === outcome);
    }
    const wrap = this.root.querySelector<HTMLElement>("#correction-wrap");
    if (wrap) wrap.hidden = outcome !== "wrong_answer";
  }

  // -- rendering ----------------------------------------------------------

  private renderIdle(note?: string): void {
    clear(this.root);
    const box = el(this.doc, "div", "idle");
    box.id = "idle";
    box.appendChild(el(this.doc, "h2", "", "All caught up"));
    box.appendChild(el(this.doc, "p", "", "No pending tasks right now."));
    const check = el(this.doc, "button", "", "Check now");
    check.id = "check-now";
    check.addEventListener("click", () => this.track(() => this.leaseNext()));
    box.appendChild(check);
    box.appendChild(el(this.doc, "p", "small",
      `Rechecking automatically every ${Math.round(this.pollMs / 1000)}s.`));
    const slot = el(this.doc, "div", "banner");
    slot.id = "banner";
    box.appendChild(slot);
    this.root.appendChild(box);
    if (note) this.banner("warn", note);
    this.cancelPoll?.();
    this.cancelPoll = this.schedule(() => this.track(() => this.leaseNext()), this.pollMs);
  }

  private renderTask(): void {
    const { task, context } = this.current!;
    clear(this.root);
    const box = el(this.doc, "div", "task");
    box.dataset.taskId = task.task_id;
    box.dataset.kind = task.kind;
    box.dataset.regionId = task.region_id;

    box.appendChild(el(this.doc, "h2", "", this.heading(task)));
    const meta = el(this.doc, "p", "meta",
      `${task.task_id} · region ${task.region_id} · ${task.payload.image_ref}`);
    box.appendChild(meta);
    const leaseNote = el(this.doc, "p", "lease-note");
    box.appendChild(leaseNote);

    box.appendChild(this.buildFrame(task, context));
    if (context?.caption) {
      box.appendChild(el(this.doc, "p", "caption", `"${context.caption}"`));
    }

    const work = el(this.doc, "section", "work");
    if (task.kind === "tag_filter") {
      this.buildChips(work, task.payload.candidates);
    } else if (task.payload.stage === 2) {
      this.buildCorrectionStage(work, task.payload.q, task.payload.a);
    } else {
      this.buildVqaStage(work, task.payload.q, task.payload.a);
    }
    box.appendChild(work);

    const slot = el(this.doc, "div", "banner");
    slot.id = "banner";
    box.appendChild(slot);

    const submit = el(this.doc, "button", "primary", "Submit");
    submit.id = "submit";
    submit.addEventListener("click", () => this.track(() => this.submitCurrent()));
    box.appendChild(submit);

    this.root.appendChild(box);
    this.updateLeaseNote();
  }

  private heading(task: Task): string {
    if (task.kind === "tag_filter") return "Keep only the tags that fit the box";
    if (task.payload.stage === 2) return "Write the correct answer";
    return "Check this answer";
  }

  private buildFrame(task: Task, context: RegionContext | null): HTMLElement {
    const bbox = context?.bbox ?? task.payload.bbox;
    const style = overlayStyle(bbox);
    const frame = el(this.doc, "div", "frame");
    frame.style.aspectRatio = String(style.aspect);
    const image = el(this.doc, "div", "image-placeholder", task.payload.image_ref);
    frame.appendChild(image);
    const overlay = el(this.doc, "div", "bbox");
    overlay.style.left = style.left;
    overlay.style.top = style.top;
    overlay.style.width = style.width;
    overlay.style.height = style.height;
    frame.appendChild(overlay);
    return frame;
  }

  private buildChips(work: HTMLElement, candidates: string[]): void {
    work.appendChild(el(this.doc, "p", "hint",
      "Everything starts selected; deselect what is wrong. Digits toggle."));
    const row = el(this.doc, "div", "chips");
    candidates.forEach((text, i) => {
      // Annotators reject the bad tags, so every chip starts selected.
      const chip = el(this.doc, "button", "chip selected");
      chip.dataset.text = text;
      if (i < 9) chip.appendChild(el(this.doc, "kbd", "", String(i + 1)));
      chip.appendChild(el(this.doc, "span", "", text));
      chip.addEventListener("click", () => chip.classList.toggle("selected"));
      row.appendChild(chip);
    });
    work.appendChild(row);
  }

  private buildVqaStage(work: HTMLElement, q: string, a: string): void {
    work.appendChild(this.qaBlock(q, a, "Proposed answer"));
    const row = el(this.doc, "div", "outcomes");
    for (const o of OUTCOMES) {
      const btn = el(this.doc, "button", "outcome");
      btn.dataset.outcome = o.outcome;
      btn.appendChild(el(this.doc, "kbd", "", o.key));
      btn.appendChild(el(this.doc, "span", "", o.label));
      btn.addEventListener("click", () => this.selectOutcome(o.outcome));
      row.appendChild(btn);
    }
    work.appendChild(row);
    const wrap = el(this.doc, "div", "correction");
    wrap.id = "correction-wrap";
    wrap.hidden = true;
    const label = el(this.doc, "label", "", "What should the answer be? (optional)");
    label.htmlFor = "correction";
    wrap.appendChild(label);
    const box = el(this.doc, "textarea");
    box.id = "correction";
    wrap.appendChild(box);
    work.appendChild(wrap);
  }

  private buildCorrectionStage(work: HTMLElement, q: string, a: string): void {
    work.appendChild(this.qaBlock(q, a, "Rejected answer"));
    const wrap = el(this.doc, "div", "correction");
    wrap.id = "correction-wrap";
    const label = el(this.doc, "label", "", "Correct answer");
    label.htmlFor = "correction";
    wrap.appendChild(label);
    const box = el(this.doc, "textarea");
    box.id = "correction";
    wrap.appendChild(box);
    work.appendChild(wrap);
  }

  private qaBlock(q: string, a: string, answerLabel: string): HTMLElement {
    const dl = el(this.doc, "dl", "qa");
    dl.appendChild(el(this.doc, "dt", "", "Question"));
    dl.appendChild(el(this.doc, "dd", "question", q));
    dl.appendChild(el(this.doc, "dt", "", answerLabel));
    dl.appendChild(el(this.doc, "dd", "answer", a));
    return dl;
  }

  private updateLeaseNote(): void {
    const note = this.root.querySelector<HTMLElement>(".lease-note");
    if (!note || !this.current) return;
    const lease = this.current.task.lease;
    if (!lease) { note.textContent = ""; return; }
    const remaining = Math.max(0, Math.round(lease.expires_at - Date.now() / 1000));
    note.textContent = `Leased to ${lease.worker_id}; expires in about ${remaining}s.`;
  }

  private banner(
    kind: "info" | "warn" | "error",
    text: string,
    actions: Array<{ id: string; label: string; onClick: () => void }> = [],
  ): void {
    let slot = this.root.querySelector<HTMLElement>("#banner");
    if (!slot) {
      slot = el(this.doc, "div", "banner");
      slot.id = "banner";
      this.root.appendChild(slot);
    }
    clear(slot);
    slot.className = `banner banner-${kind}`;
    slot.appendChild(el(this.doc, "span", "", text));
    for (const a of actions) {
      const btn = el(this.doc, "button", "banner-action", a.label);
      btn.id = a.id;
      btn.addEventListener("click", a.onClick);
      slot.appendChild(btn);
    }
  }
}
