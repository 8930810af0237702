import { describe, expect, it, vi } from "vitest";

import { AlreadyResolvedError, ApiError, ReviewApi } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ReviewApi", () => {
  it("requests the pending queue with paging parameters", async () => {
    const page = { items: [], page: 2, page_size: 10, total: 0 };
    const fetchMock = vi.fn(async (_url: string, _init?: RequestInit) => jsonResponse(page));
    const api = new ReviewApi("http://h", fetchMock);

    expect(await api.queue("pending", 2, 10)).toEqual(page);
    expect(fetchMock).toHaveBeenCalledWith(
      "http://h/api/queue?page=2&page_size=10&status=pending",
      undefined,
    );
  });

  it("omits the status filter when not asked for one", async () => {
    const fetchMock = vi.fn(async (_url: string, _init?: RequestInit) =>
      jsonResponse({ items: [], page: 1, page_size: 50, total: 0 }),
    );
    const api = new ReviewApi("", fetchMock);
    await api.queue();
    expect(fetchMock.mock.calls[0][0]).toBe("/api/queue?page=1&page_size=50");
  });

  it("fetches single items by id", async () => {
    const fetchMock = vi.fn(async (_url: string, _init?: RequestInit) => jsonResponse({ item_id: "abc" }));
    const api = new ReviewApi("", fetchMock);
    await api.item("abc");
    expect(fetchMock.mock.calls[0][0]).toBe("/api/items/abc");
  });

  it("posts label submissions as JSON", async () => {
    const fetchMock = vi.fn(async (_url: string, _init?: RequestInit) => jsonResponse({ status: "resolved" }));
    const api = new ReviewApi("http://h", fetchMock);
    const payload = {
      chest_wall: 0 as const,
      pleura: 1 as const,
      parenchyma: 0 as const,
      cardio: 0 as const,
      abnormal: 1 as const,
      annotator: "bs_ngoc",
    };

    await api.submitLabels("abc", payload);

    const [url, init] = fetchMock.mock.calls[0];
    expect(url).toBe("http://h/api/items/abc/labels");
    expect(init?.method).toBe("POST");
    expect(init?.headers).toEqual({ "Content-Type": "application/json" });
    expect(JSON.parse(init?.body as string)).toEqual(payload);
  });

  it("posts match resolutions with report id and annotator", async () => {
    const fetchMock = vi.fn(async (_url: string, _init?: RequestInit) => jsonResponse({ status: "resolved" }));
    const api = new ReviewApi("", fetchMock);

    await api.submitMatch("abc", "s#1", "bs_ngoc");

    const [url, init] = fetchMock.mock.calls[0];
    expect(url).toBe("/api/items/abc/match");
    expect(JSON.parse(init?.body as string)).toEqual({
      report_id: "s#1",
      annotator: "bs_ngoc",
    });
  });

  it("turns a 409 into AlreadyResolvedError with the server's message", async () => {
    const fetchMock = vi.fn(async () =>
      jsonResponse({ detail: "item abc is already resolved" }, 409),
    );
    const api = new ReviewApi("", fetchMock);

    const err = await api
      .submitLabels("abc", {
        chest_wall: 0,
        pleura: 0,
        parenchyma: 0,
        cardio: 0,
        abnormal: 1,
        annotator: "x",
      })
      .then(
        () => null,
        (e: unknown) => e,
      );

    expect(err).toBeInstanceOf(AlreadyResolvedError);
    expect((err as AlreadyResolvedError).status).toBe(409);
    expect((err as AlreadyResolvedError).message).toBe("item abc is already resolved");
  });

  it("surfaces other HTTP failures as ApiError with the status", async () => {
    const fetchMock = vi.fn(async (_url: string, _init?: RequestInit) => jsonResponse({ detail: "no such item" }, 404));
    const api = new ReviewApi("", fetchMock);

    await expect(api.item("missing")).rejects.toMatchObject({
      name: "ApiError",
      status: 404,
      message: "no such item",
    });
  });

  it("copes with non-JSON error bodies", async () => {
    const fetchMock = vi.fn(
      async (_url: string, _init?: RequestInit) => new Response("boom", { status: 500 }),
    );
    const api = new ReviewApi("", fetchMock);

    await expect(api.stats()).rejects.toMatchObject({
      status: 500,
      message: "request failed with status 500",
    });
  });

  it("maps network failures to status 0", async () => {
    const fetchMock = vi.fn(async (_url: string, _init?: RequestInit) => {
      throw new TypeError("fetch failed");
    });
    const api = new ReviewApi("http://down", fetchMock);

    const err = await api.stats().then(
      () => null,
      (e: unknown) => e,
    );
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(0);
    expect((err as ApiError).message).toMatch(/cannot reach review service/);
  });
});
