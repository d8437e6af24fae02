import { defineConfig } from 'vitest/config';

export default defineConfig({
  server: { port: 5173 },
  build: { outDir: 'dist' },
  test: {
    environment: 'node',
    include: ['tests/**/*.test.ts'],
  },
});
