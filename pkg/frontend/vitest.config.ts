import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    environment: "node",
    // The contract test builds a dataset, boots the real backend and runs
    // a full solve, so it needs far more headroom than the unit tests.
    testTimeout: 120_000,
    hookTimeout: 180_000,
  },
});
