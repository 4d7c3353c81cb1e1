import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // the e2e suite boots the Python kernel and drives full scenarios
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
