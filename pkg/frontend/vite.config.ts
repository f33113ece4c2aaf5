/// <reference types="vitest/config" />
import { defineConfig } from "vite";

// REST and WebSocket calls go to the acquisition service; in dev they proxy
// to a locally running `eegrig serve` (default port 8240).
export default defineConfig({
  server: {
    port: 5173,
    proxy: {
      "/status": "http://127.0.0.1:8240",
      "/stream": { target: "http://127.0.0.1:8240", ws: true },
      "/filters": "http://127.0.0.1:8240",
      "/session": "http://127.0.0.1:8240",
      "/records": "http://127.0.0.1:8240",
    },
  },
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
  },
});
