import type { GenerateRequest, GenerateResponse, ModelInfo, MorphResponse } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  readonly status: number;
  constructor(status: number, message: string) {
    super(message);
    this.status = status;
  }
}

export class ApiClient {
  private baseUrl: string;
  private fetchFn: FetchLike;

  constructor(baseUrl = "", fetchFn: FetchLike = (...args) => fetch(...args)) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn;
  }

  async listModels(): Promise<ModelInfo[]> {
    const resp = await this.fetchFn(`${this.baseUrl}/models`);
    return this.unwrap<ModelInfo[]>(resp);
  }

  async generate(modelId: string, body: GenerateRequest): Promise<GenerateResponse> {
    const resp = await this.fetchFn(`${this.baseUrl}/models/${modelId}/generate`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return this.unwrap<GenerateResponse>(resp);
  }

  async morph(
    modelId: string,
    weightsSequence: number[] | number[][],
    opts: { seed?: number; noise?: string } = {},
  ): Promise<MorphResponse> {
    const resp = await this.fetchFn(`${this.baseUrl}/models/${modelId}/morph`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ weights_sequence: weightsSequence, ...opts }),
    });
    return this.unwrap<MorphResponse>(resp);
  }

  private async unwrap<T>(resp: Response): Promise<T> {
    if (!resp.ok) {
      let detail = `${resp.status}`;
      try {
        const data = (await resp.json()) as { error?: string };
        if (data.error) detail = data.error;
      } catch {
        /* non-JSON error body */
      }
      throw new ServiceError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }
}

/**
 * Single-in-flight request gate: while a request runs, the newest queued call
 * replaces any older queued one, and responses arriving for superseded
 * requests are discarded.
 */
export class RequestGate<T> {
  private inFlight = false;
  private queued: (() => Promise<T>) | null = null;
  private token = 0;
  private onResult: (value: T) => void;

  constructor(onResult: (value: T) => void) {
    this.onResult = onResult;
  }

  submit(task: () => Promise<T>): void {
    if (this.inFlight) {
      this.queued = task;
      return;
    }
    void this.run(task);
  }

  get busy(): boolean {
    return this.inFlight;
  }

  private async run(task: () => Promise<T>): Promise<void> {
    this.inFlight = true;
    const myToken = ++this.token;
    try {
      const value = await task();
      if (myToken === this.token) {
        this.onResult(value);
      }
    } finally {
      this.inFlight = false;
      const next = this.queued;
      this.queued = null;
      if (next) {
        void this.run(next);
      }
    }
  }
}

export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  waitMs: number,
  timers: { set: typeof setTimeout; clear: typeof clearTimeout } = {
    set: setTimeout,
    clear: clearTimeout,
  },
): (...args: A) => void {
  let handle: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (handle !== null) {
      timers.clear(handle);
    }
    handle = timers.set(() => {
      handle = null;
      fn(...args);
    }, waitMs);
  };
}
