// Slider-rate request management: debounce edits, keep at most one decode in
// flight, and always render the latest result (stale responses are dropped).

export class DecodeScheduler<T> {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = false;
  private queued: (() => Promise<T>) | null = null;
  private generation = 0;

  constructor(
    private debounceMs: number,
    private onResult: (result: T) => void,
    private onError: (error: unknown) => void = () => {},
  ) {}

  /** Schedule a request factory; earlier pending ones are superseded. */
  schedule(request: () => Promise<T>): void {
    this.queued = request;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.fire();
    }, this.debounceMs);
  }

  private async fire(): Promise<void> {
    if (this.inFlight || this.queued === null) return;
    const request = this.queued;
    this.queued = null;
    const generation = ++this.generation;
    this.inFlight = true;
    try {
      const result = await request();
      if (generation === this.generation) this.onResult(result);
    } catch (error) {
      if (generation === this.generation) this.onError(error);
    } finally {
      this.inFlight = false;
      if (this.queued !== null) void this.fire();
    }
  }
}
