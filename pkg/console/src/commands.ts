/** Command delivery: exactly one request per accepted press.
 *
 * A button is locked from the moment its command is sent until the
 * acknowledgement or a 1 s timeout, so double-clicks inside that window
 * send nothing. STOP is never locked out while the service is connected.
 */

import { Command } from "./types.js";

export interface SendResult {
  ok: boolean;
  error?: string;
}

type FetchLike = (url: string, init?: object) => Promise<{
  ok: boolean;
  json(): Promise<unknown>;
}>;

export class CommandSender {
  private pending = new Set<Command>();
  readonly timeoutMs: number;
  private readonly fetchFn: FetchLike;
  lastError: string | null = null;

  constructor(
    private baseUrl: string,
    opts: { timeoutMs?: number; fetchFn?: FetchLike } = {},
  ) {
    this.timeoutMs = opts.timeoutMs ?? 1000;
    this.fetchFn = opts.fetchFn ?? (fetch as unknown as FetchLike);
  }

  /** Whether the button for a command should be enabled right now. */
  canSend(cmd: Command, connected: boolean): boolean {
    if (!connected) return false;
    if (cmd === "STOP") return true;
    return !this.pending.has(cmd);
  }

  isPending(cmd: Command): boolean {
    return this.pending.has(cmd);
  }

  async send(cmd: Command, connected = true): Promise<SendResult> {
    if (!this.canSend(cmd, connected)) {
      return { ok: false, error: "locked" };
    }
    this.pending.add(cmd);
    const release = setTimeout(() => this.pending.delete(cmd), this.timeoutMs);
    try {
      const res = await this.fetchFn(`${this.baseUrl}/api/command`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ command: cmd }),
      });
      const body = (await res.json()) as { ok?: boolean; error?: string };
      if (!res.ok || body.ok !== true) {
        this.lastError = body.error ?? `http error`;
        return { ok: false, error: this.lastError };
      }
      this.lastError = null;
      return { ok: true };
    } catch (err) {
      this.lastError = "timeout";
      return { ok: false, error: "timeout" };
    } finally {
      clearTimeout(release);
      this.pending.delete(cmd);
    }
  }
}
