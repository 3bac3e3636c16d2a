import { SessionClient } from "./api.js";
import { AssistantApp } from "./ui.js";

window.addEventListener("DOMContentLoaded", () => {
    const root = document.getElementById("app");
    if (!root) {
        throw new Error("missing #app mount point");
    }
    const client = new SessionClient(window.location.origin);
    const app = new AssistantApp(root, client);
    void app.newSession();
});
