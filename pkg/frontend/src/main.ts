import { Api } from "./api.js";
import { render } from "./render.js";
import { ReviewStore } from "./store.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

const store = new ReviewStore(new Api(""));
store.onChange(() => render(root, store));

void store.refresh();
setInterval(() => void store.refresh(), 15000);
