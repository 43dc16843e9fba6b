import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // contract and e2e files spawn a real service process
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
