import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    globalSetup: "./tests/setup/service.ts",
    environment: "node",
    hookTimeout: 180_000,
    testTimeout: 60_000,
  },
});
