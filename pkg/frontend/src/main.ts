// Boot: parse the share link, join the session, wire keyboard + touch.

import { createApi, parseShareFragment } from "./api";
import { SwipeSession } from "./session";
import { render } from "./ui";

const POLL_MS = 1000;
const SWIPE_THRESHOLD_PX = 40;

function boot(): void {
  const root = document.getElementById("app");
  if (root === null) return;

  const parsed = parseShareFragment(window.location.hash);
  if (parsed === null) {
    root.textContent =
      "Open this page through a share link: /#/label/{session}/{token}";
    return;
  }

  const api = createApi("", parsed.sessionId, parsed.shareToken);
  const session = new SwipeSession(api, parsed.sessionId, parsed.shareToken, {
    onUpdate: (state) => render(root, state, api),
  });

  window.addEventListener("keydown", (event) => {
    if (event.key === "u" || event.key === "U") {
      session.undo();
      return;
    }
    if (session.keydown(event.key)) event.preventDefault();
  });

  let touchStartX: number | null = null;
  window.addEventListener("touchstart", (event) => {
    touchStartX = event.touches[0]?.clientX ?? null;
  });
  window.addEventListener("touchend", (event) => {
    if (touchStartX === null) return;
    const endX = event.changedTouches[0]?.clientX ?? touchStartX;
    const delta = endX - touchStartX;
    touchStartX = null;
    if (Math.abs(delta) < SWIPE_THRESHOLD_PX) return;
    session.swipe(delta > 0 ? "right" : "left");
  });

  void session.join().then(async () => {
    for (;;) {
      const done = await session.sync();
      if (done) break;
      await new Promise((resolve) => setTimeout(resolve, POLL_MS));
    }
  });
}

boot();
