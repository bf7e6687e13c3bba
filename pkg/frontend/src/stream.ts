// Live event subscription with gap-free resume.
//
// The native EventSource replays Last-Event-ID on its own reconnects, but
// we also reconnect explicitly (fresh page, server restart) by passing
// ?last_event_id=<the last id we processed>, so nothing between sessions
// is lost either. Event ids are the server's log sequence numbers.

export interface EventSourceLike {
  onopen: ((ev: unknown) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  addEventListener(type: string, handler: (ev: MessageEvent) => void): void;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface StreamHandlers {
  onEvent: (id: number, type: string, payload: unknown) => void;
  onStatus: (status: "live" | "degraded") => void;
}

const EVENT_TYPES = ["reading", "assessment", "alert", "link_state"];

export class StreamClient {
  private source: EventSourceLike | null = null;
  private lastId = 0;
  private retryMs = 1000;
  private closed = false;

  constructor(
    private baseUrl: string,
    private handlers: StreamHandlers,
    private factory: EventSourceFactory = (url) => new EventSource(url) as EventSourceLike,
    private schedule: (fn: () => void, ms: number) => void = (fn, ms) => {
      setTimeout(fn, ms);
    },
  ) {}

  connect(fromId: number = this.lastId): void {
    if (this.closed) return;
    this.lastId = Math.max(this.lastId, fromId);
    const url = `${this.baseUrl}/stream?last_event_id=${this.lastId}`;
    const source = this.factory(url);
    this.source = source;
    source.onopen = () => {
      this.retryMs = 1000;
      this.handlers.onStatus("live");
    };
    source.onerror = () => {
      this.handlers.onStatus("degraded");
      source.close();
      if (this.source === source && !this.closed) {
        this.source = null;
        this.schedule(() => this.connect(), this.retryMs);
        this.retryMs = Math.min(this.retryMs * 2, 30_000);
      }
    };
    for (const type of EVENT_TYPES) {
      source.addEventListener(type, (ev) => {
        const id = Number(ev.lastEventId ?? 0);
        if (id > 0 && id <= this.lastId && type !== "link_state") {
          return; // older than what we already processed
        }
        if (id > 0) this.lastId = id;
        let payload: unknown = null;
        try {
          payload = JSON.parse(ev.data);
        } catch {
          return;
        }
        this.handlers.onEvent(id, type, payload);
      });
    }
  }

  close(): void {
    this.closed = true;
    this.source?.close();
    this.source = null;
  }

  lastEventId(): number {
    return this.lastId;
  }
}
