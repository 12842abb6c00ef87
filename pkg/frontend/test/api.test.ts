import { describe, expect, it } from "vitest";
import { ApiClient, ServiceError } from "../src/api";
import { cubeRecord, solveResponse } from "./fixtures/record";

interface Captured {
  url: string;
  init?: RequestInit;
}

function clientReturning(status: number, body: unknown): { api: ApiClient; calls: Captured[] } {
  const calls: Captured[] = [];
  const fetchFn: typeof fetch = async (input, init) => {
    calls.push({ url: String(input), init });
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  };
  return { api: new ApiClient("http://svc", fetchFn), calls };
}

describe("ApiClient", () => {
  it("builds record list queries from the filter", async () => {
    const { api, calls } = clientReturning(200, [cubeRecord()]);
    const records = await api.listRecords({ category: "chair", occluded: false });
    expect(records).toHaveLength(1);
    expect(calls[0].url).toBe("http://svc/records?category=chair&occluded=false");
  });

  it("sends the session id and JSON body on solve", async () => {
    const { api, calls } = clientReturning(200, solveResponse());
    await api.solve("item000", { method: "plain" }, "ui-7:plain");
    expect(calls[0].url).toBe("http://svc/records/item000/solve");
    const headers = calls[0].init?.headers as Record<string, string>;
    expect(headers["X-Session-Id"]).toBe("ui-7:plain");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({ method: "plain" });
  });

  it("unwraps the committed record", async () => {
    const { api } = clientReturning(200, { record: cubeRecord({ version: 3 }) });
    const record = await api.commit("item000", { expected_version: 2 }, "ui-7:plain");
    expect(record.version).toBe(3);
  });

  it("maps service errors onto ServiceError with code and status", async () => {
    const { api } = clientReturning(409, { code: "VersionConflict", message: "stale commit" });
    const err = await api
      .commit("item000", { expected_version: 0 }, "ui-7:plain")
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ServiceError);
    expect((err as ServiceError).status).toBe(409);
    expect((err as ServiceError).code).toBe("VersionConflict");
    expect((err as ServiceError).message).toBe("stale commit");
  });

  it("flags schema drift in otherwise successful responses", async () => {
    const body = solveResponse() as unknown as Record<string, unknown>;
    delete body.residuals;
    const { api } = clientReturning(200, body);
    await expect(api.solve("item000", { method: "plain" }, "s")).rejects.toThrow();
  });
});
