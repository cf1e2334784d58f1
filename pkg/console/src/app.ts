/** Console wiring: SSE stream with polling fallback, staleness banner,
 * command buttons, task list, and the canvas view. */

import { CommandSender } from "./commands.js";
import { renderWorkspace } from "./render.js";
import { fetchState, parseStateDoc } from "./state.js";
import { COMMANDS, Command, ConsoleState, DISCONNECTED_STATE } from "./types.js";

// stale threshold plus one poll tick stays inside the 3 s disable budget
const STALE_MS = 2500;
const POLL_MS = 500;

class ConsoleApp {
  state: ConsoleState = DISCONNECTED_STATE;
  lastUpdate = 0;
  private sender = new CommandSender("");
  private source: EventSource | null = null;
  private polling = false;

  start(): void {
    this.openStream();
    window.setInterval(() => this.tick(), POLL_MS);
    for (const cmd of COMMANDS) {
      const el = document.getElementById(`cmd-${cmd.toLowerCase()}`);
      el?.addEventListener("click", () => void this.press(cmd));
    }
  }

  private openStream(): void {
    try {
      this.source = new EventSource("/api/events");
      this.source.addEventListener("state", (ev) => {
        const parsed = parseStateDoc(JSON.parse((ev as MessageEvent).data));
        if (parsed) this.accept(parsed);
      });
      this.source.onerror = () => {
        this.source?.close();
        this.source = null;
        this.polling = true; // stream dropped; fall back to polling
      };
    } catch {
      this.polling = true;
    }
  }

  private async tick(): Promise<void> {
    if (this.polling || this.source === null) {
      const state = await fetchState("");
      if (state.connected) this.accept(state);
    }
    if (Date.now() - this.lastUpdate > STALE_MS && this.state.connected) {
      this.state = { ...this.state, connected: false };
      this.redraw();
    }
    if (this.source === null && !this.polling) this.openStream();
  }

  private accept(state: ConsoleState): void {
    if (state.seq < this.state.seq && state.connected) return; // stale document
    this.state = state;
    this.lastUpdate = Date.now();
    this.redraw();
  }

  private async press(cmd: Command): Promise<void> {
    if (!this.sender.canSend(cmd, this.state.connected)) return;
    this.redraw();
    await this.sender.send(cmd, this.state.connected);
    this.redraw();
  }

  private redraw(): void {
    const banner = document.getElementById("banner");
    if (banner) {
      banner.hidden = this.state.connected;
    }
    const phase = document.getElementById("phase");
    if (phase) {
      phase.textContent = this.state.connected
        ? `${this.state.phase ?? "?"}  task ${Math.min(
            this.state.taskIndex + 1,
            this.state.taskCount,
          )}/${this.state.taskCount}${this.state.laserOn ? "  laser on" : ""}`
        : "disconnected";
    }
    for (const cmd of COMMANDS) {
      const el = document.getElementById(
        `cmd-${cmd.toLowerCase()}`,
      ) as HTMLButtonElement | null;
      if (el) el.disabled = !this.sender.canSend(cmd, this.state.connected);
    }
    this.renderTasks();
    const canvas = document.getElementById("workspace") as HTMLCanvasElement | null;
    const ctx = canvas?.getContext("2d");
    if (canvas && ctx) {
      renderWorkspace(ctx, this.state, canvas.width, canvas.height);
    }
    const err = document.getElementById("error");
    if (err) err.textContent = this.sender.lastError ?? "";
  }

  private renderTasks(): void {
    const list = document.getElementById("tasks");
    if (!list) return;
    const rows = this.state.tasks.map(
      (t) =>
        `<li class="task ${t.status}${
          t.id === this.state.currentTask ? " current" : ""
        }">${t.id}</li>`,
    );
    list.innerHTML = rows.join("");
    const current = list.querySelector(".current");
    current?.scrollIntoView({ block: "nearest" });
  }
}

new ConsoleApp().start();
