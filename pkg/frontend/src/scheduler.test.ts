import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { DecodeScheduler } from "./scheduler";

describe("DecodeScheduler", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("debounces a burst of edits into one request", async () => {
    const results: number[] = [];
    const scheduler = new DecodeScheduler<number>(60, (r) => results.push(r));
    const request = vi.fn(async () => 42);
    for (let i = 0; i < 10; i++) {
      scheduler.schedule(request);
      vi.advanceTimersByTime(10);
    }
    await vi.advanceTimersByTimeAsync(100);
    expect(request).toHaveBeenCalledTimes(1);
    expect(results).toEqual([42]);
  });

  it("keeps at most one request in flight and runs the latest afterwards", async () => {
    const results: number[] = [];
    const scheduler = new DecodeScheduler<number>(10, (r) => results.push(r));
    let release!: (v: number) => void;
    const slow = () => new Promise<number>((resolve) => (release = resolve));
    scheduler.schedule(slow);
    await vi.advanceTimersByTimeAsync(20); // slow request now in flight

    const second = vi.fn(async () => 2);
    const third = vi.fn(async () => 3);
    scheduler.schedule(second);
    scheduler.schedule(third); // supersedes second before its debounce fires
    await vi.advanceTimersByTimeAsync(20);
    expect(second).not.toHaveBeenCalled();
    expect(third).not.toHaveBeenCalled();

    release(1);
    await vi.advanceTimersByTimeAsync(20);
    expect(third).toHaveBeenCalledTimes(1);
    expect(second).not.toHaveBeenCalled();
    expect(results).toEqual([1, 3]);
  });

  it("routes failures to the error handler", async () => {
    const errors: unknown[] = [];
    const scheduler = new DecodeScheduler<number>(
      5,
      () => {},
      (e) => errors.push(e),
    );
    scheduler.schedule(async () => {
      throw new Error("400: beta has length 3");
    });
    await vi.advanceTimersByTimeAsync(20);
    expect(errors).toHaveLength(1);
    expect((errors[0] as Error).message).toContain("beta has length 3");
  });
});
