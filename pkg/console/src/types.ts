/** Shared console types; wire schema documented in docs/console-api.md. */

export const COMMANDS = ["NEXT", "PREV", "RESTART", "STOP"] as const;
export type Command = (typeof COMMANDS)[number];

export type Phase =
  | "IDLE"
  | "LOCALIZING"
  | "AT_STATION"
  | "MOVING"
  | "PROJECTING"
  | "STOPPED"
  | "DONE";

export type TaskStatus = "pending" | "active" | "done" | "failed";

export interface TaskEntry {
  id: string;
  status: TaskStatus;
}

export interface StationEntry {
  id: number;
  x: number;
  y: number;
  yawDeg: number;
  active: boolean;
}

export interface TargetEntry {
  id: string;
  x: number;
  y: number;
  status: TaskStatus;
}

export interface MarkEntry {
  x: number;
  y: number;
  dx: number;
  dy: number;
}

export interface Footprint {
  min: [number, number];
  max: [number, number];
}

export interface ConsoleState {
  connected: boolean;
  phase: Phase | null;
  taskIndex: number;
  taskCount: number;
  currentTask: string | null;
  laserOn: boolean;
  seq: number;
  tasks: TaskEntry[];
  stations: StationEntry[];
  targets: TargetEntry[];
  footprint: Footprint | null;
  mark: MarkEntry | null;
}

export const DISCONNECTED_STATE: ConsoleState = {
  connected: false,
  phase: null,
  taskIndex: 0,
  taskCount: 0,
  currentTask: null,
  laserOn: false,
  seq: -1,
  tasks: [],
  stations: [],
  targets: [],
  footprint: null,
  mark: null,
};
