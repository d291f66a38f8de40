import { describe, expect, it } from "vitest";

import { createApi } from "../src/api";
import { SwipeSession, directionToLabel, keyToDirection } from "../src/session";
import { MockBackend, makeBatch } from "./mockBackend";

function sessionOver(backend: MockBackend, options: { flushAt?: number; flushMs?: number } = {}) {
  const api = createApi("", backend.sessionId, backend.shareToken, backend.fetch);
  return new SwipeSession(api, backend.sessionId, backend.shareToken, {
    flushAt: options.flushAt ?? 5,
    flushMs: options.flushMs ?? 60_000, // tests flush explicitly
  });
}

async function driveToDone(session: SwipeSession, backend: MockBackend, swiper: (s: SwipeSession, n: number) => void) {
  let guard = 0;
  let swiped = 0;
  for (;;) {
    if (++guard > 500) throw new Error("session never finished");
    const item = session.currentItem();
    if (item !== null) {
      swiper(session, swiped++);
      continue;
    }
    const done = await session.sync();
    if (done) return;
  }
}

describe("mappings", () => {
  it("right means relevant, left means not relevant", () => {
    expect(directionToLabel("right")).toBe("relevant");
    expect(directionToLabel("left")).toBe("not_relevant");
    expect(keyToDirection("ArrowRight")).toBe("right");
    expect(keyToDirection("ArrowLeft")).toBe("left");
    expect(keyToDirection("Enter")).toBeNull();
  });
});

describe("SwipeSession", () => {
  it("join shows the first image of the current batch", async () => {
    const backend = new MockBackend({ batches: [makeBatch("b0", 0, ["x1", "x2"])] });
    const session = sessionOver(backend);
    await session.join();
    expect(session.currentItem()?.item_id).toBe("x1");
    expect(session.snapshot().error).toBeNull();
  });

  it("invalid token surfaces the error view without retrying", async () => {
    const backend = new MockBackend();
    const api = createApi("", backend.sessionId, "wrong-token", backend.fetch);
    const session = new SwipeSession(api, backend.sessionId, "wrong-token");
    await session.join();
    expect(session.snapshot().error).toMatch(/not valid/);
  });

  it("ArrowRight posts a relevant label for the displayed item", async () => {
    const backend = new MockBackend({ batches: [makeBatch("b0", 0, ["x1", "x2"])] });
    const session = sessionOver(backend);
    await session.join();
    expect(session.keydown("ArrowRight")).toBe(true);
    await session.sync();
    expect(backend.posts.flat()).toContainEqual({ item_id: "x1", label: "relevant" });
  });

  it("five rapid swipes produce exactly one POST with five labels", async () => {
    const backend = new MockBackend({
      batches: [makeBatch("b0", 0, ["a", "b", "c", "d", "e", "f"])],
    });
    const session = sessionOver(backend, { flushAt: 5 });
    await session.join();
    for (let i = 0; i < 5; i++) session.swipe("right");
    await Promise.resolve(); // let the size-triggered flush settle
    await Promise.resolve();
    expect(backend.posts).toHaveLength(1);
    expect(backend.posts[0]).toHaveLength(5);
  });

  it("undo after one swipe leaves no label for that item in any POST", async () => {
    const backend = new MockBackend({ batches: [makeBatch("b0", 0, ["u1", "u2"])] });
    const session = sessionOver(backend);
    await session.join();
    session.swipe("left");
    expect(session.undo()).toBe(true);
    expect(session.currentItem()?.item_id).toBe("u1"); // back on screen
    session.swipe("right");
    session.swipe("right");
    await driveToDone(session, backend, (s) => s.swipe("right"));
    const labelsForU1 = backend.posts.flat().filter((r) => r.item_id === "u1");
    expect(labelsForU1).toEqual([{ item_id: "u1", label: "relevant" }]);
  });

  it("keyboard and touch paths produce identical payloads", async () => {
    const run = async (useKeys: boolean) => {
      const backend = new MockBackend({ batches: [makeBatch("b0", 0, ["k1", "k2"])] });
      const session = sessionOver(backend);
      await session.join();
      if (useKeys) {
        session.keydown("ArrowRight");
        session.keydown("ArrowLeft");
      } else {
        session.swipe("right");
        session.swipe("left");
      }
      await session.sync();
      return backend.posts.flat();
    };
    expect(await run(true)).toEqual(await run(false));
  });

  it("never displays an item outside the current batch", async () => {
    const batches = [
      makeBatch("b0", 0, ["a1", "a2"]),
      makeBatch("b1", 1, ["b1", "b2", "b3"]),
    ];
    const backend = new MockBackend({ batches });
    const session = sessionOver(backend);
    await session.join();
    const allowed = new Set(batches.flatMap((b) => b.items.map((i) => i.item_id)));
    await driveToDone(session, backend, (s) => {
      const shown = s.currentItem();
      expect(shown).not.toBeNull();
      expect(allowed.has(shown!.item_id)).toBe(true);
      s.swipe("right");
    });
    expect(backend.phase).toBe("done");
  });

  it("acceptance: 20 mixed swipes survive a flush failure with no duplicates", async () => {
    const ids = Array.from({ length: 20 }, (_, i) => `img-${i.toString().padStart(2, "0")}`);
    const backend = new MockBackend({
      batches: [
        makeBatch("b0", 0, ids.slice(0, 10)),
        makeBatch("b1", 1, ids.slice(10)),
      ],
      failPosts: 1, // first flush dies on the network, labels must survive
      trainingTicks: 2,
    });
    const session = sessionOver(backend, { flushAt: 5 });
    await session.join();

    const expected = new Map<string, "relevant" | "not_relevant">();
    let swipes = 0;
    await driveToDone(session, backend, (s) => {
      const item = s.currentItem()!;
      const direction = swipes % 3 === 0 ? "left" : "right";
      expected.set(item.item_id, direction === "right" ? "relevant" : "not_relevant");
      if (swipes % 2 === 0) {
        s.keydown(direction === "right" ? "ArrowRight" : "ArrowLeft"); // keyboard path
      } else {
        s.swipe(direction); // touch path
      }
      swipes++;
    });

    expect(swipes).toBe(20);
    expect(backend.labels.size).toBe(20); // exactly one record per item
    for (const [item, label] of expected) {
      expect(backend.labels.get(item)).toBe(label);
    }
    expect(backend.postAttempts).toBeGreaterThan(backend.posts.length); // a retry happened
    expect(backend.phase).toBe("done");
  });

  it("tracks budget progress from status", async () => {
    const backend = new MockBackend({ budget: 196 });
    for (let i = 0; i < 96; i++) backend.labels.set(`seed-${i}`, "relevant");
    const session = sessionOver(backend);
    await session.join();
    expect(session.progress()).toBeCloseTo(96 / 196, 5);
  });
});
