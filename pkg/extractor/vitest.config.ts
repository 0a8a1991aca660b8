import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    testTimeout: 180_000, // full-size topology forward passes run in pure JS
    hookTimeout: 60_000,
  },
});
