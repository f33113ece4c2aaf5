import "./style.css";
import { ApiClient } from "./api";
import { Cockpit, requiredElements } from "./cockpit";
import { canvasSurface, DEFAULT_MONTAGE, Scope } from "./scope";
import { StreamSocket } from "./socket";
import { ConsoleState } from "./state";
import { TraceStore } from "./traces";

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const state = new ConsoleState();
  const store = new TraceStore(250, 60);
  const elements = requiredElements(document);

  const canvas = document.getElementById("scope") as HTMLCanvasElement;
  const scope = new Scope(canvasSurface(canvas), {
    windowSeconds: 10,
    uvPerDivision: 50,
    visibleChannels: new Array(16).fill(true),
    montage: [...DEFAULT_MONTAGE],
  });

  const cockpit = new Cockpit(api, elements, [...DEFAULT_MONTAGE]);

  const refresh = async () => {
    state.applySnapshot(await api.getStatus());
    cockpit.render(state);
  };

  const socket = new StreamSocket(
    wsUrl("/stream"),
    (message) => {
      state.apply(message);
      if (message.type === "samples") store.append(message);
      cockpit.render(state);
    },
    (connected) => {
      state.connected = connected;
      if (connected) void refresh(); // reattach: rebuild from server state
      cockpit.render(state);
    },
  );

  cockpit.bind(state, refresh);

  const windowSelect = document.getElementById("window-select") as HTMLSelectElement;
  windowSelect.addEventListener("change", () => {
    scope.options.windowSeconds = Number(windowSelect.value);
  });
  const scaleSelect = document.getElementById("scale-select") as HTMLSelectElement;
  scaleSelect.addEventListener("change", () => {
    scope.options.uvPerDivision = Number(scaleSelect.value);
  });
  const pauseButton = document.getElementById("pause-button") as HTMLButtonElement;
  pauseButton.addEventListener("click", () => {
    scope.setPaused(!scope.paused, store);
    pauseButton.textContent = scope.paused ? "Live" : "Pause";
  });

  const resize = () => {
    canvas.width = canvas.clientWidth;
    canvas.height = canvas.clientHeight;
  };
  window.addEventListener("resize", resize);
  resize();

  const frame = () => {
    scope.draw(store);
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);

  await refresh();
  socket.connect();
}

function wsUrl(path: string): string {
  const proto = window.location.protocol === "https:" ? "wss" : "ws";
  return `${proto}://${window.location.host}${path}`;
}

window.addEventListener("DOMContentLoaded", () => {
  void boot();
});
