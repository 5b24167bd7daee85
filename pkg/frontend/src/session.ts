/**
 * Client session state machine: lockstep input handling over the teleop
 * protocol. Exactly one ACTION may be in flight; key presses while waiting
 * (or after the episode ended) are dropped, never queued.
 */
import { ActionName, Frame, StateFrame, parseState } from "./protocol.js";

export type SendFn = (type: "HELLO" | "ACTION", fields: Record<string, string>) => void;

export interface SessionEvents {
  onState?: (state: StateFrame) => void;
  onResult?: (fields: Record<string, string>) => void;
  onError?: (fields: Record<string, string>) => void;
}

export const KEY_BINDINGS: Record<string, ActionName> = {
  ArrowUp: "MOVE_FORWARD",
  ArrowLeft: "TURN_LEFT",
  ArrowRight: "TURN_RIGHT",
  " ": "STOP",
};

export class ClientSession {
  state: StateFrame | null = null;
  sketch: StateFrame["sketch"] = undefined;
  startMarker: [number, number] | undefined;
  goalMarker: [number, number] | undefined;
  episode = "";
  armed = false;          // true when we may send the next ACTION
  outcome: "running" | "success" | "failure" | "error" = "running";
  errorMessage = "";
  actionsSent = 0;
  statesSeen = 0;

  constructor(private send: SendFn, private events: SessionEvents = {}) {}

  hello(split: string, abstraction: string, episode: string, session = ""): void {
    const fields: Record<string, string> = { split, abstraction, episode };
    if (session) fields["session"] = session;
    this.send("HELLO", fields);
  }

  /** Handle one decoded frame from the socket. */
  handleFrame(frame: Frame): void {
    if (frame.type === "STATE") {
      const state = parseState(frame);
      this.statesSeen += 1;
      this.state = state;
      if (state.sketch) {
        this.sketch = state.sketch;
        this.startMarker = state.startMarker;
        this.goalMarker = state.goalMarker;
        this.episode = state.episode ?? "";
      }
      if (state.done) {
        this.armed = false;
        this.outcome = state.success ? "success" : "failure";
      } else {
        this.armed = true;
      }
      this.events.onState?.(state);
      return;
    }
    if (frame.type === "RESULT") {
      this.armed = false;
      this.outcome = frame.fields["success"] === "1" ? "success" : "failure";
      this.events.onResult?.(frame.fields);
      return;
    }
    if (frame.type === "ERROR") {
      this.errorMessage = frame.fields["message"] ?? frame.fields["code"] ?? "error";
      this.events.onError?.(frame.fields);
      return;
    }
    throw new Error(`unexpected frame type ${frame.type}`);
  }

  /** Key press -> at most one ACTION; returns the action sent, if any. */
  keyPressed(key: string): ActionName | null {
    const action = KEY_BINDINGS[key];
    if (!action) return null;
    return this.sendAction(action);
  }

  sendAction(action: ActionName): ActionName | null {
    if (!this.armed || this.outcome !== "running") return null;
    this.armed = false;     // locked until the next STATE
    this.actionsSent += 1;
    this.send("ACTION", { action });
    return action;
  }

  /** Lockstep invariant: never more actions than states. */
  lockstepHolds(): boolean {
    return this.actionsSent <= this.statesSeen;
  }
}
