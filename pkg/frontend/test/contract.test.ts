/**
 * Contract test against the real backend: boot the service on a synthetic
 * one-record dataset, drive the full annotation flow through the client
 * and state layers, and verify the committed pose with the backend's own
 * silhouette audit.
 */
import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ApiClient, ServiceError } from "../src/api";
import {
  beginSolve,
  applySolveResult,
  canSolve,
  commitPlan,
  imageToScreen,
  beginDrag,
  dragTo,
  endDrag,
  initialState,
  loadRecord,
  placeMarker,
  residualBadge,
  selectVariant,
  sessionFor,
  solvePayload,
} from "../src/state";

const HERE = dirname(fileURLToPath(import.meta.url));
const PYTHON = process.env.PYTHON ?? "python3";
const PORT = 18230 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;
const SESSION = "contract-ui";

// a trimmed focal sweep bracketing the fixture's focal keeps solves quick
const SOLVER_CONFIG = {
  focal_min: 200.0,
  focal_max: 300.0,
  focal_step: 20.0,
  n_restarts: 2,
  lma_max_iter: 60,
};

const SERVE_SRC = `
import sys
import uvicorn
from shapealign.service import create_app
uvicorn.run(create_app(sys.argv[1]), host="127.0.0.1", port=int(sys.argv[2]),
            log_level="warning")
`;

let dataset: string;
let server: ChildProcess;
let serverLog = "";

async function waitForServer(): Promise<void> {
  const deadline = Date.now() + 60_000;
  for (;;) {
    try {
      const res = await fetch(`${BASE}/records`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      throw new Error(`service did not come up on ${BASE}\n${serverLog}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
}

beforeAll(async () => {
  dataset = mkdtempSync(join(tmpdir(), "annotator-contract-"));
  const built = spawnSync(PYTHON, [join(HERE, "fixtures", "make_dataset.py"), dataset], {
    encoding: "utf-8",
  });
  if (built.status !== 0) {
    throw new Error(`fixture dataset build failed:\n${built.stderr}`);
  }
  server = spawn(PYTHON, ["-c", SERVE_SRC, dataset, String(PORT)], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  server.stdout?.on("data", (chunk: Buffer) => (serverLog += chunk.toString()));
  server.stderr?.on("data", (chunk: Buffer) => (serverLog += chunk.toString()));
  await waitForServer();
});

afterAll(() => {
  server?.kill();
  if (dataset) rmSync(dataset, { recursive: true, force: true });
});

describe("annotation flow against the live service", () => {
  const api = () => new ApiClient(BASE);

  it("places 8 keypoints, solves to all-green badges, and commits a pose the audit accepts", async () => {
    const records = await api().listRecords();
    expect(records).toHaveLength(1);
    expect(records[0].pose).toBeNull();
    const record = await api().getRecord(records[0].id);
    expect(record.version).toBe(0);

    const state = initialState();
    loadRecord(state, record);
    expect(state.markers).toHaveLength(8);

    // Annotate from scratch: scatter the markers, then place each one on
    // its target through the interaction layer at an uneven zoom.
    state.view = { zoom: 1.7, panX: 23.0, panY: -9.5 };
    const targets = record.keypoint_annotations[0].points;
    state.markers.forEach((_, i) => placeMarker(state, i, 5 + i, 5));
    targets.forEach(([x, y], i) => {
      const [sx, sy] = imageToScreen(state.view, x, y);
      beginDrag(state, i);
      dragTo(state, sx, sy);
      endDrag(state);
    });
    state.markers.forEach((marker, i) => {
      expect(marker.x).toBeCloseTo(targets[i][0], 9);
      expect(marker.y).toBeCloseTo(targets[i][1], 9);
    });

    expect(canSolve(state, "plain")).toBe(true);
    const payload = solvePayload(state, "plain", SOLVER_CONFIG);
    const ticket = beginSolve(state, "plain");
    const response = await api().solve(record.id, payload, sessionFor(SESSION, "plain"));
    expect(applySolveResult(state, ticket, response)).toBe(true);

    // every residual badge is green: < 2 px reprojection error
    const variant = state.variants.plain!;
    expect(variant.residuals).toHaveLength(8);
    for (const residual of variant.residuals) {
      expect(residual).not.toBeNull();
      expect(residual!).toBeLessThan(2.0);
      expect(residualBadge(residual)).toBe("green");
    }
    expect(variant.outline.length).toBeGreaterThan(0);

    // solve a second variant side by side, then commit the plain one
    const ransacPayload = solvePayload(state, "ransac", SOLVER_CONFIG);
    const ransacTicket = beginSolve(state, "ransac");
    const ransacResponse = await api().solve(
      record.id,
      ransacPayload,
      sessionFor(SESSION, "ransac"),
    );
    expect(applySolveResult(state, ransacTicket, ransacResponse)).toBe(true);
    expect(state.variants.ransac?.solution.method).toBe("ransac");

    selectVariant(state, "plain");
    const plan = commitPlan(state);
    expect(plan.method).toBe("plain");
    const updated = await api().commit(record.id, plan.body, sessionFor(SESSION, plan.method));
    expect(updated.version).toBe(1);
    expect(updated.pose).not.toBeNull();
    loadRecord(state, updated);

    // the commit log names the method the user selected, not the last solve
    const log = readFileSync(join(dataset, "audit.log"), "utf-8");
    expect(log).toContain("method=plain");
    expect(log).not.toContain("method=ransac");

    // backend audit re-renders the committed pose and scores the mask IoU
    const audit = spawnSync(
      PYTHON,
      ["-c", "from shapealign.cli import main; main()", "audit", "--dataset", dataset],
      { encoding: "utf-8" },
    );
    expect(audit.status, audit.stderr).toBe(0);
    const report = JSON.parse(audit.stdout) as {
      mean_iou: number;
      per_record: { record: string; iou: number | null }[];
    };
    expect(report.per_record).toHaveLength(1);
    expect(report.mean_iou).toBeGreaterThan(0.99);
  });

  it("surfaces backend 422s with the failing precondition named", async () => {
    const record = (await api().listRecords())[0];
    const tooFew = {
      method: "plain",
      keypoints_2d: [
        {
          points: record.keypoint_annotations[0].points,
          visibility: [true, true, true, false, false, false, false, false],
        },
      ],
      config: SOLVER_CONFIG,
    };
    const err = await api()
      .solve(record.id, tooFew, sessionFor(SESSION, "plain"))
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ServiceError);
    expect((err as ServiceError).status).toBe(422);
    expect((err as ServiceError).code).toBe("TooFewPoints");
  });

  it("rejects a stale commit with a version conflict", async () => {
    const record = (await api().listRecords())[0];
    const state = initialState();
    loadRecord(state, record);
    const payload = solvePayload(state, "plain", SOLVER_CONFIG);
    const ticket = beginSolve(state, "plain");
    const response = await api().solve(record.id, payload, sessionFor("stale-ui", "plain"));
    applySolveResult(state, ticket, response);
    const err = await api()
      .commit(record.id, { expected_version: 0 }, sessionFor("stale-ui", "plain"))
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ServiceError);
    expect((err as ServiceError).code).toBe("VersionConflict");
  });
});
