/**
 * Minimal RFC 6455 WebSocket client over node:net, for the scripted driver
 * and tests (Node 20 has no global WebSocket). Text frames only; client
 * frames are masked as the RFC requires.
 */
import * as net from "node:net";
import * as crypto from "node:crypto";

export class NodeWsClient {
  private sock!: net.Socket;
  private buffer = Buffer.alloc(0);
  private pending: string[] = [];
  private waiters: ((msg: string | null) => void)[] = [];
  private closed = false;

  static async connect(host: string, port: number): Promise<NodeWsClient> {
    const client = new NodeWsClient();
    await client.open(host, port);
    return client;
  }

  private open(host: string, port: number): Promise<void> {
    return new Promise((resolve, reject) => {
      const key = crypto.randomBytes(16).toString("base64");
      this.sock = net.createConnection({ host, port }, () => {
        this.sock.write(
          `GET / HTTP/1.1\r\nHost: ${host}:${port}\r\n` +
          "Upgrade: websocket\r\nConnection: Upgrade\r\n" +
          `Sec-WebSocket-Key: ${key}\r\nSec-WebSocket-Version: 13\r\n\r\n`);
      });
      let handshakeDone = false;
      this.sock.on("data", (chunk: Buffer) => {
        this.buffer = Buffer.concat([this.buffer, chunk]);
        if (!handshakeDone) {
          const end = this.buffer.indexOf("\r\n\r\n");
          if (end < 0) return;
          const head = this.buffer.subarray(0, end).toString("latin1");
          this.buffer = this.buffer.subarray(end + 4);
          if (!head.includes("101")) {
            reject(new Error(`handshake refused: ${head.split("\r\n")[0]}`));
            return;
          }
          handshakeDone = true;
          resolve();
        }
        this.drainFrames();
      });
      this.sock.on("error", (err) => {
        if (!handshakeDone) reject(err);
        this.finish();
      });
      this.sock.on("close", () => this.finish());
    });
  }

  private finish(): void {
    this.closed = true;
    while (this.waiters.length) this.waiters.shift()!(null);
  }

  private drainFrames(): void {
    for (;;) {
      if (this.buffer.length < 2) return;
      const opcode = this.buffer[0] & 0x0f;
      const masked = (this.buffer[1] & 0x80) !== 0;
      let len = this.buffer[1] & 0x7f;
      let offset = 2;
      if (len === 126) {
        if (this.buffer.length < 4) return;
        len = this.buffer.readUInt16BE(2);
        offset = 4;
      } else if (len === 127) {
        if (this.buffer.length < 10) return;
        len = Number(this.buffer.readBigUInt64BE(2));
        offset = 10;
      }
      const maskLen = masked ? 4 : 0;
      if (this.buffer.length < offset + maskLen + len) return;
      let payload = this.buffer.subarray(offset + maskLen, offset + maskLen + len);
      if (masked) {
        const mask = this.buffer.subarray(offset, offset + 4);
        payload = Buffer.from(payload.map((b, i) => b ^ mask[i % 4]));
      }
      this.buffer = this.buffer.subarray(offset + maskLen + len);
      if (opcode === 8) {
        this.finish();
        this.sock.end();
        return;
      }
      if (opcode === 9) {
        this.sock.write(this.frame(Buffer.from(payload), 0x0a));
        continue;
      }
      if (opcode === 1 || opcode === 2) {
        const text = payload.toString("utf-8");
        const waiter = this.waiters.shift();
        if (waiter) waiter(text);
        else this.pending.push(text);
      }
    }
  }

  private frame(payload: Buffer, opcode: number): Buffer {
    const mask = crypto.randomBytes(4);
    const head: number[] = [0x80 | opcode];
    if (payload.length < 126) {
      head.push(0x80 | payload.length);
    } else if (payload.length < 1 << 16) {
      head.push(0x80 | 126, payload.length >> 8, payload.length & 0xff);
    } else {
      head.push(0x80 | 127);
      const big = Buffer.alloc(8);
      big.writeBigUInt64BE(BigInt(payload.length));
      head.push(...big);
    }
    const maskedPayload = Buffer.from(payload.map((b, i) => b ^ mask[i % 4]));
    return Buffer.concat([Buffer.from(head), mask, maskedPayload]);
  }

  sendText(text: string): void {
    this.sock.write(this.frame(Buffer.from(text, "utf-8"), 0x01));
  }

  recvText(timeoutMs = 15000): Promise<string | null> {
    if (this.pending.length) return Promise.resolve(this.pending.shift()!);
    if (this.closed) return Promise.resolve(null);
    return new Promise((resolve) => {
      const timer = setTimeout(() => {
        const idx = this.waiters.indexOf(waiter);
        if (idx >= 0) this.waiters.splice(idx, 1);
        resolve(null);
      }, timeoutMs);
      const waiter = (msg: string | null) => {
        clearTimeout(timer);
        resolve(msg);
      };
      this.waiters.push(waiter);
    });
  }

  close(): void {
    try {
      this.sock.write(Buffer.from([0x88, 0x80, 0, 0, 0, 0]));
    } catch { /* already gone */ }
    this.sock.end();
  }
}
