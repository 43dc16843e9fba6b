/**
 * Typed fetch client for the verification service.
 *
 * All responses are parsed through the schemas in schema.ts. Domain
 * failures surface as ApiError with the service's error type and
 * message; network failures propagate as whatever fetch threw, so the
 * caller can tell "the service said no" from "the service is gone".
 */

import { z } from "zod";
import {
  ErrorBody, Metrics, OpenPackages, RegionContext, ReviewPackage,
  SubmitResponse, SubmitResult, Task,
} from "./schema.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly type: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** Surface the console talks to; FakeApi in the tests implements it too. */
export interface Api {
  lease(workerId: string, kind?: string): Promise<Task | null>;
  getTask(taskId: string): Promise<Task>;
  submit(taskId: string, workerId: string, result: SubmitResult): Promise<SubmitResponse>;
  openPackages(): Promise<ReviewPackage[]>;
  getPackage(packageId: string): Promise<ReviewPackage>;
  review(packageId: string, expertId: string, verdicts: boolean[]): Promise<ReviewPackage>;
  metrics(): Promise<Metrics>;
  regionContext(regionId: string): Promise<RegionContext>;
}

export interface ApiOptions {
  baseUrl: string;
  token?: string;
  fetchFn?: typeof fetch;
}

function parse<T>(schema: z.ZodType<T>, data: unknown, what: string): T {
  const out = schema.safeParse(data);
  if (!out.success) {
    throw new Error(`unexpected ${what} payload: ${out.error.message}`);
  }
  return out.data;
}

export class ApiClient implements Api {
  private readonly baseUrl: string;
  private readonly token?: string;
  private readonly fetchFn: typeof fetch;

  constructor(opts: ApiOptions) {
    this.baseUrl = opts.baseUrl.replace(/\/$/, "");
    this.token = opts.token;
    this.fetchFn = opts.fetchFn ?? fetch;
  }

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const headers: Record<string, string> = { "accept": "application/json" };
    if (body !== undefined) headers["content-type"] = "application/json";
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    const res = await this.fetchFn(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (res.status === 204) return null;
    const data: unknown = await res.json().catch(() => null);
    if (!res.ok) {
      const domain = ErrorBody.safeParse(data);
      if (domain.success) {
        throw new ApiError(res.status, domain.data.error.type, domain.data.error.message);
      }
      const detail = (data as { detail?: unknown } | null)?.detail;
      const message = typeof detail === "string" ? detail : JSON.stringify(detail ?? data);
      throw new ApiError(res.status, "HTTPError", message);
    }
    return data;
  }

  async lease(workerId: string, kind?: string): Promise<Task | null> {
    const body: Record<string, unknown> = { worker_id: workerId };
    if (kind !== undefined) body.kind = kind;
    const data = await this.request("POST", "/api/tasks/lease", body);
    if (data === null) return null;
    return parse(Task, data, "task");
  }

  async getTask(taskId: string): Promise<Task> {
    return parse(Task, await this.request("GET", `/api/tasks/${taskId}`), "task");
  }

  async submit(taskId: string, workerId: string, result: SubmitResult): Promise<SubmitResponse> {
    const data = await this.request("POST", `/api/tasks/${taskId}/submit`,
      { worker_id: workerId, result });
    return parse(SubmitResponse, data, "submit response");
  }

  async openPackages(): Promise<ReviewPackage[]> {
    const data = await this.request("GET", "/api/packages/open");
    return parse(OpenPackages, data, "open packages").packages;
  }

  async getPackage(packageId: string): Promise<ReviewPackage> {
    const data = await this.request("GET", `/api/packages/${packageId}`);
    return parse(ReviewPackage, data, "package");
  }

  async review(packageId: string, expertId: string, verdicts: boolean[]): Promise<ReviewPackage> {
    const data = await this.request("POST", `/api/packages/${packageId}/review`,
      { expert_id: expertId, verdicts });
    return parse(ReviewPackage, data, "package");
  }

  async metrics(): Promise<Metrics> {
    return parse(Metrics, await this.request("GET", "/api/metrics"), "metrics");
  }

  async regionContext(regionId: string): Promise<RegionContext> {
    const data = await this.request("GET", `/api/regions/${regionId}/context`);
    return parse(RegionContext, data, "region context");
  }

  async healthy(): Promise<boolean> {
    try {
      await this.request("GET", "/api/healthz");
      return true;
    } catch {
      return false;
    }
  }
}
