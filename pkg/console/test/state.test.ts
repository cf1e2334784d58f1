import { describe, expect, it } from "vitest";

import { fetchState, parseStateDoc } from "../src/state.js";
import { DISCONNECTED_STATE } from "../src/types.js";

function stateDoc(overrides: Record<string, unknown> = {}): Record<string, unknown> {
  return {
    version: 1,
    phase: "PROJECTING",
    task_index: 4,
    task_count: 53,
    current_task: "in-05",
    laser_on: true,
    seq: 9,
    tasks: Array.from({ length: 53 }, (_, i) => ({
      id: `t${i}`,
      status: i < 4 ? "done" : i === 4 ? "active" : "pending",
    })),
    stations: [
      { id: 0, x_m: -2.5, y_m: 3.1, yaw_deg: -51.0, active: true },
      { id: 1, x_m: 2.5, y_m: -3.4, yaw_deg: 120.0, active: false },
    ],
    footprint: { min: [-2, -1.4], max: [2, 1.4] },
    targets: [{ id: "t0", x_m: 0.0, y_m: -0.85, status: "done" }],
    mark: { x_m: 0.1, y_m: 0.2, dx: 1, dy: 0 },
    ...overrides,
  };
}

describe("parseStateDoc", () => {
  it("maps a projecting document", () => {
    const state = parseStateDoc(stateDoc());
    expect(state).not.toBeNull();
    expect(state!.phase).toBe("PROJECTING");
    expect(state!.taskIndex).toBe(4);
    expect(state!.tasks.filter((t) => t.status === "done")).toHaveLength(4);
    expect(state!.tasks.filter((t) => t.status === "active")).toHaveLength(1);
    expect(state!.tasks[4].status).toBe("active");
    expect(state!.connected).toBe(true);
    expect(state!.mark).toEqual({ x: 0.1, y: 0.2, dx: 1, dy: 0 });
  });

  it("handles an empty plan", () => {
    const state = parseStateDoc(
      stateDoc({ tasks: [], task_count: 0, task_index: 0, current_task: null, mark: null }),
    );
    expect(state!.tasks).toHaveLength(0);
    expect(state!.taskCount).toBe(0);
    expect(state!.mark).toBeNull();
  });

  it("ignores unknown fields", () => {
    const state = parseStateDoc(stateDoc({ futuristic: { nested: [1, 2, 3] } }));
    expect(state).not.toBeNull();
    expect(state!.taskCount).toBe(53);
  });

  it("rejects structurally broken documents without crashing", () => {
    const broken: unknown[] = [
      null,
      42,
      "phase",
      [],
      {},
      { phase: "NOPE", task_index: 0, task_count: 0 },
      { phase: "MOVING", task_index: "x", task_count: 3 },
      stateDoc({ phase: 7 }),
      stateDoc({ task_count: Number.NaN }),
    ];
    for (const doc of broken) {
      expect(parseStateDoc(doc)).toBeNull();
    }
  });

  it("drops malformed collection entries but keeps the rest", () => {
    const state = parseStateDoc(
      stateDoc({
        tasks: [{ id: "ok", status: "done" }, { status: "done" }, 17, null],
        stations: [{ id: 0, x_m: 1, y_m: 2 }, { id: "x" }, "junk"],
        targets: [{ id: "a", x_m: 0, y_m: 0, status: "weird" }],
      }),
    );
    expect(state!.tasks).toHaveLength(1);
    expect(state!.stations).toHaveLength(1);
    expect(state!.targets).toEqual([{ id: "a", x: 0, y: 0, status: "pending" }]);
  });

  it("fuzzes field types without throwing", () => {
    const junkValues: unknown[] = [null, [], {}, "x", -1, Number.NaN, true, { a: [] }];
    const base = stateDoc();
    for (const key of Object.keys(base)) {
      for (const junk of junkValues) {
        expect(() => parseStateDoc({ ...base, [key]: junk })).not.toThrow();
      }
    }
  });
});

describe("fetchState", () => {
  it("maps network failure to the disconnected state", async () => {
    const failing = () => Promise.reject(new Error("refused"));
    const state = await fetchState("http://nowhere", failing);
    expect(state).toEqual(DISCONNECTED_STATE);
  });

  it("maps malformed bodies to the disconnected state", async () => {
    const weird = () =>
      Promise.resolve({ ok: true, json: () => Promise.resolve("not a doc") });
    const state = await fetchState("", weird);
    expect(state.connected).toBe(false);
  });
});
