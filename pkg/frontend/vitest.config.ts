import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
    // the e2e suite boots a real engine process; give it room
    testTimeout: 30_000,
    hookTimeout: 30_000,
  },
});
