import { API_BASE } from "./config.js";
import type {
  ItemStatus,
  LabelPayload,
  QueuePage,
  QueueStats,
  ReviewItem,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** Someone resolved the item first. Refetch it and lock the form. */
export class AlreadyResolvedError extends ApiError {
  constructor(message: string) {
    super(409, message);
    this.name = "AlreadyResolvedError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") {
      return body.detail;
    }
  } catch {
    // non-JSON body, fall back to the status line
  }
  return `request failed with status ${response.status}`;
}

export class ReviewApi {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(base: string = API_BASE, fetchImpl?: FetchLike) {
    this.base = base;
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.base + path, init);
    } catch (err) {
      throw new ApiError(0, `cannot reach review service: ${String(err)}`);
    }
    if (response.status === 409) {
      throw new AlreadyResolvedError(await errorDetail(response));
    }
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  queue(status?: ItemStatus, page = 1, pageSize = 50): Promise<QueuePage> {
    const params = new URLSearchParams({
      page: String(page),
      page_size: String(pageSize),
    });
    if (status) {
      params.set("status", status);
    }
    return this.request(`/api/queue?${params.toString()}`);
  }

  item(itemId: string): Promise<ReviewItem> {
    return this.request(`/api/items/${encodeURIComponent(itemId)}`);
  }

  submitLabels(itemId: string, payload: LabelPayload): Promise<ReviewItem> {
    return this.post(`/api/items/${encodeURIComponent(itemId)}/labels`, payload);
  }

  submitMatch(
    itemId: string,
    reportId: string,
    annotator: string,
  ): Promise<ReviewItem> {
    return this.post(`/api/items/${encodeURIComponent(itemId)}/match`, {
      report_id: reportId,
      annotator,
    });
  }

  stats(): Promise<QueueStats> {
    return this.request("/api/stats");
  }
}
