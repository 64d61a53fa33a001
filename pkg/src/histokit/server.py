"""HTTP review service: cluster cards, tile sampling, label/split mutations.

Many concurrent readers are fine; every mutation is serialized through one
lock, applied to a copy of the tree, persisted with an atomic rename and only
then swapped in and acknowledged - killing the process mid-flight never
corrupts the annotation tree and never loses an acknowledged action.
"""

from __future__ import annotations

import copy
import hashlib
import json
import threading
import time
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .clustering import AnnotationTree
from .datastore import TileManifest
from .errors import TreeError

DEFAULT_SAMPLE_SIZE = 16
DEFAULT_LABELS = ("cancer", "benign epithelium", "stroma", "other")

_FALLBACK_PAGE = """<!doctype html>
<html><head><meta charset="utf-8"><title>histokit review</title></head>
<body style="font-family: sans-serif; max-width: 40em; margin: 4em auto;">
<h1>histokit review service</h1>
<p>The review UI bundle is not installed. Point <code>--ui-root</code> at a
built frontend (see <code>frontend/</code> in the repository), or use the
JSON API directly: <code>GET /api/clusters</code>,
<code>GET /api/clusters/{id}/samples?m=16</code>,
<code>POST /api/clusters/{id}/label</code>,
<code>POST /api/clusters/{id}/split</code>, <code>GET /api/export</code>.</p>
</body></html>"""

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
}


class ReviewApp:
    """State and operations behind the HTTP handler; one writer at a time."""

    def __init__(
        self,
        tree: AnnotationTree,
        tree_path: str | Path,
        manifest: TileManifest,
        embeddings=None,
        tile_root: str | Path = ".",
        ui_root: str | Path | None = None,
        sample_size: int = DEFAULT_SAMPLE_SIZE,
        labels: tuple[str, ...] = DEFAULT_LABELS,
    ):
        self.tree = tree
        self.tree_path = Path(tree_path)
        self.manifest = manifest
        self.embeddings = embeddings
        self.tile_root = Path(tile_root)
        self.ui_root = Path(ui_root) if ui_root else None
        self.sample_size = sample_size
        self.labels = labels
        self._write_lock = threading.Lock()

    # -- read side ---------------------------------------------------------

    def clusters_doc(self) -> dict:
        tree = self.tree
        frontier = {n.node_id for n in tree.unlabeled_frontier()}
        nodes = []
        for node in tree.nodes.values():
            nodes.append(
                {
                    "id": node.node_id,
                    "parent_id": node.parent_id,
                    "size": node.size,
                    "label": node.label,
                    "purity": node.purity,
                    "children": list(node.children),
                    "actionable": node.node_id in frontier,
                }
            )
        nodes.sort(key=lambda n: (-n["size"], n["id"]))
        return {
            "revision": tree.revision,
            "n_tiles": tree.n_tiles,
            "labels": list(self.labels),
            "nodes": nodes,
        }

    def samples_doc(self, node_id: int, m: int, seed: int) -> dict:
        self._require_node(node_id)
        tree = self.tree
        rows = tree.sample_tiles(node_id, m=m, seed=seed)
        tiles = []
        for row in rows:
            record = self.manifest.records[int(row)]
            tiles.append(
                {
                    "row": int(row),
                    "tile_id": record.tile_id,
                    "label": record.label,
                    "url": f"/tiles/{urllib.parse.quote(record.tile_id)}",
                }
            )
        return {
            "node_id": node_id,
            "revision": tree.revision,
            "seed": seed,
            "tiles": tiles,
        }

    def export_csv(self) -> str:
        rows = self.tree.export_annotations()
        out = ["tile_id,label,node_id,purity"]
        ids = self.manifest.tile_ids
        for tile_row, label, node_id, purity in rows:
            purity_s = "" if purity is None else repr(float(purity))
            out.append(f"{ids[tile_row]},{label or ''},{node_id},{purity_s}")
        return "\n".join(out) + "\n"

    # -- write side ----------------------------------------------------------

    def _mutate(self, expected_revision, apply):
        """Copy-mutate-persist-swap; acknowledged only after the atomic rename."""
        with self._write_lock:
            if expected_revision is not None and expected_revision != self.tree.revision:
                raise ConflictError(
                    f"tree moved on: revision is {self.tree.revision}, "
                    f"you expected {expected_revision}"
                )
            candidate = copy.deepcopy(self.tree)
            result = apply(candidate)
            candidate.save(self.tree_path)
            self.tree = candidate
            return result, candidate.revision

    def _require_node(self, node_id: int) -> None:
        if node_id not in self.tree.nodes:
            raise NotFoundError(f"unknown node {node_id}")

    def label_node(self, node_id: int, label: str, actor: str, expected_revision=None):
        self._require_node(node_id)

        def apply(tree):
            tree.label_node(node_id, label, actor=actor, timestamp=time.time())
            return None

        return self._mutate(expected_revision, apply)

    def split_node(self, node_id: int, k: int, seed, actor: str, expected_revision=None):
        self._require_node(node_id)
        if self.embeddings is None:
            raise TreeError("serve mode was started without embeddings; cannot split")

        def apply(tree):
            return tree.split_node(
                node_id,
                k_child=k,
                X=self.embeddings,
                seed=seed,
                actor=actor,
                timestamp=time.time(),
            )

        return self._mutate(expected_revision, apply)

    # -- tiles / static --------------------------------------------------------

    def tile_bytes(self, tile_id: str) -> tuple[bytes, str]:
        try:
            record = self.manifest.records[self.manifest.index_of(tile_id)]
        except KeyError:
            raise NotFoundError(f"unknown tile {tile_id!r}") from None
        if record.image_path:
            path = (self.tile_root / record.image_path).resolve()
            root = self.tile_root.resolve()
            if path.is_file() and (path == root or root in path.parents):
                suffix = path.suffix.lower()
                return path.read_bytes(), _CONTENT_TYPES.get(suffix, "application/octet-stream")
        return _placeholder_svg(tile_id), "image/svg+xml"

    def static_bytes(self, path: str) -> tuple[bytes, str] | None:
        if self.ui_root is None or not self.ui_root.is_dir():
            if path in ("/", "/index.html"):
                return _FALLBACK_PAGE.encode(), "text/html; charset=utf-8"
            return None
        rel = "index.html" if path == "/" else path.lstrip("/")
        target = (self.ui_root / rel).resolve()
        root = self.ui_root.resolve()
        if not target.is_file() or (target != root and root not in target.parents):
            return None
        return target.read_bytes(), _CONTENT_TYPES.get(
            target.suffix.lower(), "application/octet-stream"
        )


class ConflictError(TreeError):
    """Concurrent-writer conflict; mapped to HTTP 409."""


class NotFoundError(TreeError):
    """Unknown node or tile; mapped to HTTP 404."""


def _placeholder_svg(tile_id: str) -> bytes:
    """Deterministic patterned placeholder for tiles without image files."""
    digest = hashlib.sha256(tile_id.encode()).hexdigest()
    hue = int(digest[:4], 16) % 360
    hue2 = (hue + 40) % 360
    svg = (
        '<svg xmlns="http://www.w3.org/2000/svg" width="96" height="96">'
        f'<rect width="96" height="96" fill="hsl({hue},45%,70%)"/>'
        f'<circle cx="48" cy="48" r="26" fill="hsl({hue2},55%,55%)"/>'
        f'<text x="48" y="53" font-size="11" text-anchor="middle" '
        f'fill="#222" font-family="monospace">{tile_id[:10]}</text></svg>'
    )
    return svg.encode()


class _Handler(BaseHTTPRequestHandler):
    app: ReviewApp  # set by make_server

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, status: int, body: bytes, content_type: str):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, doc) -> None:
        self._send(status, json.dumps(doc).encode(), "application/json")

    def _error(self, status: int, message: str) -> None:
        self._send_json(status, {"error": message})

    def _read_json_body(self):
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        raw = self.rfile.read(length)
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValueError(f"bad JSON body: {exc}") from None
        if not isinstance(doc, dict):
            raise ValueError("JSON body must be an object")
        return doc

    def do_GET(self):
        app = self.app
        parsed = urllib.parse.urlparse(self.path)
        parts = [p for p in parsed.path.split("/") if p]
        try:
            if parsed.path == "/api/clusters":
                self._send_json(200, app.clusters_doc())
            elif len(parts) == 4 and parts[:2] == ["api", "clusters"] and parts[3] == "samples":
                node_id = int(parts[2])
                query = urllib.parse.parse_qs(parsed.query)
                m = int(query.get("m", [app.sample_size])[0])
                seed = int(query.get("seed", [0])[0])
                self._send_json(200, app.samples_doc(node_id, m=m, seed=seed))
            elif parsed.path == "/api/export":
                self._send(200, app.export_csv().encode(), "text/csv; charset=utf-8")
            elif len(parts) == 2 and parts[0] == "tiles":
                body, ctype = app.tile_bytes(urllib.parse.unquote(parts[1]))
                self._send(200, body, ctype)
            else:
                static = app.static_bytes(parsed.path)
                if static is None:
                    self._error(404, f"no such path: {parsed.path}")
                else:
                    self._send(200, *static)
        except NotFoundError as exc:
            self._error(404, str(exc))
        except (ValueError, TreeError) as exc:
            self._error(400, str(exc))

    def do_POST(self):
        app = self.app
        parts = [p for p in self.path.split("?")[0].split("/") if p]
        try:
            if len(parts) != 4 or parts[:2] != ["api", "clusters"]:
                self._error(404, f"no such path: {self.path}")
                return
            node_id = int(parts[2])
            action = parts[3]
            body = self._read_json_body()
            actor = str(body.get("actor", "ui"))
            expected = body.get("expected_revision")
            if expected is not None:
                expected = int(expected)
            if action == "label":
                label = body.get("label")
                if not label or not isinstance(label, str):
                    raise ValueError("body must carry a non-empty string 'label'")
                _, revision = app.label_node(node_id, label, actor, expected)
                self._send_json(200, {"ok": True, "revision": revision})
            elif action == "split":
                k = int(body.get("k", 0))
                seed = body.get("seed")
                seed = int(seed) if seed is not None else None
                children, revision = app.split_node(node_id, k, seed, actor, expected)
                self._send_json(200, {"ok": True, "children": children, "revision": revision})
            else:
                self._error(404, f"unknown action {action!r}")
        except ConflictError as exc:
            self._error(409, str(exc))
        except NotFoundError as exc:
            self._error(404, str(exc))
        except ValueError as exc:
            self._error(400, str(exc))
        except TreeError as exc:
            # invalid state transitions (label conflicts, bad splits)
            self._error(409, str(exc))


def make_server(app: ReviewApp, host: str = "127.0.0.1", port: int = 8765) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"app": app})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(app: ReviewApp, host: str, port: int) -> None:
    server = make_server(app, host, port)
    print(f"histokit serve: listening on http://{host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
