/**
 * Scripted teleop client: drives a fixed action sequence through a live
 * service, exactly as the browser client would (lockstep, same protocol),
 * and reports the RESULT frame as JSON on stdout.
 *
 * Usage: node dist/src/scripted.js <host> <port> <episode_id> <actions>
 * where <actions> is a comma-separated list of action names.
 */
import { decodeFrame, encodeFrame, ActionName } from "./protocol.js";
import { ClientSession } from "./session.js";
import { NodeWsClient } from "./ws_node.js";

export interface ScriptedOutcome {
  success: boolean;
  steps: number;
  spl: number;
  softspl: number;
  dtg: number;
  statesSeen: number;
  actionsSent: number;
  lockstepHeld: boolean;
  protocolErrors: string[];
}

export async function runScripted(host: string, port: number, episode: string,
                                  actions: ActionName[],
                                  split = "train"): Promise<ScriptedOutcome> {
  const ws = await NodeWsClient.connect(host, port);
  const protocolErrors: string[] = [];
  let result: Record<string, string> | null = null;
  const session = new ClientSession(
    (type, fields) => ws.sendText(encodeFrame(type, fields)),
    {
      onError: (fields) => protocolErrors.push(fields["message"] ?? "?"),
      onResult: (fields) => { result = fields; },
    });
  session.hello(split, "LOW", episode);

  let next = 0;
  while (result === null) {
    const msg = await ws.recvText();
    if (msg === null) throw new Error("server closed the connection early");
    session.handleFrame(decodeFrame(msg));
    if (result !== null) break;
    if (session.armed && next < actions.length) {
      session.sendAction(actions[next]);
      next += 1;
    } else if (session.armed) {
      throw new Error("action script exhausted before the episode ended");
    }
  }
  ws.close();
  const r = result as Record<string, string>;
  return {
    success: r["success"] === "1",
    steps: parseInt(r["steps"], 10),
    spl: parseFloat(r["spl"]),
    softspl: parseFloat(r["softspl"]),
    dtg: parseFloat(r["dtg"]),
    statesSeen: session.statesSeen,
    actionsSent: session.actionsSent,
    lockstepHeld: session.lockstepHolds(),
    protocolErrors,
  };
}

const isMain = process.argv[1]?.endsWith("scripted.js");
if (isMain) {
  const [host, port, episode, actionCsv, split] = process.argv.slice(2);
  const actions = actionCsv.split(",") as ActionName[];
  runScripted(host, parseInt(port, 10), episode, actions, split || "train")
    .then((outcome) => {
      console.log(JSON.stringify(outcome));
      process.exit(outcome.success && outcome.protocolErrors.length === 0 ? 0 : 3);
    })
    .catch((err) => {
      console.error(String(err));
      process.exit(2);
    });
}
