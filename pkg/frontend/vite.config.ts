import { defineConfig } from "vite";

// during development the service runs separately; proxy its endpoints
export default defineConfig({
  server: {
    proxy: {
      "/manifest": "http://127.0.0.1:8080",
      "/topology": "http://127.0.0.1:8080",
      "/decode": "http://127.0.0.1:8080",
      "/encode": "http://127.0.0.1:8080",
      "/transfer": "http://127.0.0.1:8080",
    },
  },
});
