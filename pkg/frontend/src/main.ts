import { ApiClient } from "./api.js";
import { buildApp } from "./app.js";

const base = new URLSearchParams(location.search).get("api") ?? "";
const host = document.getElementById("app");
if (host) {
  const app = buildApp(host, new ApiClient(base));
  void app.controller.loadModels();
}
