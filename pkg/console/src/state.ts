/** State document parsing: strict enough to never crash, loose enough to
 * ignore unknown fields (forward compatibility). Anything structurally
 * broken maps to the disconnected state. */

import {
  ConsoleState,
  DISCONNECTED_STATE,
  Phase,
  StationEntry,
  TargetEntry,
  TaskEntry,
  TaskStatus,
} from "./types.js";

const PHASES = new Set<Phase>([
  "IDLE",
  "LOCALIZING",
  "AT_STATION",
  "MOVING",
  "PROJECTING",
  "STOPPED",
  "DONE",
]);
const STATUSES = new Set<TaskStatus>(["pending", "active", "done", "failed"]);

function num(v: unknown): number | null {
  return typeof v === "number" && Number.isFinite(v) ? v : null;
}

function str(v: unknown): string | null {
  return typeof v === "string" ? v : null;
}

function asStatus(v: unknown): TaskStatus {
  return STATUSES.has(v as TaskStatus) ? (v as TaskStatus) : "pending";
}

/** Map a raw /api/state document onto ConsoleState; null when unusable. */
export function parseStateDoc(doc: unknown): ConsoleState | null {
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) return null;
  const d = doc as Record<string, unknown>;
  const phase = str(d.phase);
  if (phase === null || !PHASES.has(phase as Phase)) return null;
  const taskIndex = num(d.task_index);
  const taskCount = num(d.task_count);
  if (taskIndex === null || taskCount === null) return null;

  const tasks: TaskEntry[] = [];
  if (Array.isArray(d.tasks)) {
    for (const raw of d.tasks) {
      if (typeof raw !== "object" || raw === null) continue;
      const t = raw as Record<string, unknown>;
      const id = str(t.id);
      if (id === null) continue;
      tasks.push({ id, status: asStatus(t.status) });
    }
  }

  const stations: StationEntry[] = [];
  if (Array.isArray(d.stations)) {
    for (const raw of d.stations) {
      if (typeof raw !== "object" || raw === null) continue;
      const s = raw as Record<string, unknown>;
      const id = num(s.id);
      const x = num(s.x_m);
      const y = num(s.y_m);
      if (id === null || x === null || y === null) continue;
      stations.push({
        id,
        x,
        y,
        yawDeg: num(s.yaw_deg) ?? 0,
        active: s.active === true,
      });
    }
  }

  const targets: TargetEntry[] = [];
  if (Array.isArray(d.targets)) {
    for (const raw of d.targets) {
      if (typeof raw !== "object" || raw === null) continue;
      const t = raw as Record<string, unknown>;
      const id = str(t.id);
      const x = num(t.x_m);
      const y = num(t.y_m);
      if (id === null || x === null || y === null) continue;
      targets.push({ id, x, y, status: asStatus(t.status) });
    }
  }

  let footprint: ConsoleState["footprint"] = null;
  const fp = d.footprint as Record<string, unknown> | undefined;
  if (fp && Array.isArray(fp.min) && Array.isArray(fp.max)) {
    const vals = [fp.min[0], fp.min[1], fp.max[0], fp.max[1]].map(num);
    if (vals.every((v) => v !== null)) {
      footprint = {
        min: [vals[0] as number, vals[1] as number],
        max: [vals[2] as number, vals[3] as number],
      };
    }
  }

  let mark: ConsoleState["mark"] = null;
  const m = d.mark as Record<string, unknown> | null | undefined;
  if (m && typeof m === "object") {
    const x = num(m.x_m);
    const y = num(m.y_m);
    const dx = num(m.dx);
    const dy = num(m.dy);
    if (x !== null && y !== null && dx !== null && dy !== null) {
      mark = { x, y, dx, dy };
    }
  }

  return {
    connected: true,
    phase: phase as Phase,
    taskIndex,
    taskCount,
    currentTask: str(d.current_task),
    laserOn: d.laser_on === true,
    seq: num(d.seq) ?? 0,
    tasks,
    stations,
    targets,
    footprint,
    mark,
  };
}

export type FetchLike = (url: string, init?: object) => Promise<{
  ok: boolean;
  json(): Promise<unknown>;
}>;

/** Fetch and parse the state document; any failure means disconnected. */
export async function fetchState(
  baseUrl: string,
  fetchFn: FetchLike = fetch as unknown as FetchLike,
): Promise<ConsoleState> {
  try {
    const res = await fetchFn(`${baseUrl}/api/state`);
    if (!res.ok) return DISCONNECTED_STATE;
    const parsed = parseStateDoc(await res.json());
    return parsed ?? DISCONNECTED_STATE;
  } catch {
    return DISCONNECTED_STATE;
  }
}
