"""File trees as JSON: repair, parse, validate, write to disk, merge.

Generated code travels between agents as one JSON object mapping relative
file paths to file contents. Model output is often almost-JSON (fenced,
prefixed with prose, smart-quoted, truncated), so a deterministic repair
pipeline runs before strict parsing. Materialization is the only impure
operation and never writes outside the directory it is given.
"""

from __future__ import annotations

import bisect
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping

from .errors import TreeError

DEFAULT_ROOT_LABEL = "express-server"

# --- tolerant JSON repair ----------------------------------------------------


@dataclass(frozen=True)
class RepairReport:
    """Which rules changed the text. changed is true iff any rule applied;
    parseability of the result is the caller's concern."""

    rules_applied: tuple[str, ...] = ()
    changed: bool = False
    before_len: int = 0
    after_len: int = 0


def _parses(text: str) -> bool:
    try:
        json.loads(text)
        return True
    except (json.JSONDecodeError, TypeError):
        return False


_SMART_OPEN = "“"
_SMART_CLOSE = "”"
_VALID_ESCAPES = set('"\\/bfnrtu')


def _strip_bom(text: str) -> str:
    return text.lstrip("﻿")


def _strip_prose(text: str) -> str:
    """Keep the outermost brace-delimited span, dropping fences and chatter.

    The span is found by a string-aware depth scan from the first opener; a
    scan that never rebalances means truncation, so the span runs to the end
    for later rules to close.
    """
    for opener, closer in (("{", "}"), ("[", "]")):
        start = text.find(opener)
        if start == -1:
            continue
        depth = 0
        in_str = False
        i = start
        while i < len(text):
            ch = text[i]
            if in_str:
                if ch == "\\":
                    i += 2
                    continue
                if ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == opener:
                depth += 1
            elif ch == closer:
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
            i += 1
        return text[start:]
    return text


def _smart_quotes(text: str) -> str:
    """Normalize smart double quotes acting as string delimiters."""
    out: list[str] = []
    state = "outside"  # outside | straight | smart
    i = 0
    while i < len(text):
        ch = text[i]
        if state == "outside":
            if ch == '"':
                state = "straight"
                out.append(ch)
            elif ch in (_SMART_OPEN, _SMART_CLOSE):
                state = "smart"
                out.append('"')
            else:
                out.append(ch)
        elif state == "straight":
            if ch == "\\" and i + 1 < len(text):
                out.append(ch)
                out.append(text[i + 1])
                i += 2
                continue
            if ch == '"':
                state = "outside"
            out.append(ch)
        else:  # smart
            if ch in (_SMART_OPEN, _SMART_CLOSE):
                state = "outside"
                out.append('"')
            elif ch == '"':
                out.append('\\"')
            else:
                out.append(ch)
        i += 1
    return "".join(out)


def _trailing_commas(text: str) -> str:
    out: list[str] = []
    in_str = False
    i = 0
    while i < len(text):
        ch = text[i]
        if in_str:
            if ch == "\\" and i + 1 < len(text):
                out.append(ch)
                out.append(text[i + 1])
                i += 2
                continue
            if ch == '"':
                in_str = False
            out.append(ch)
        elif ch == '"':
            in_str = True
            out.append(ch)
        elif ch == ",":
            j = i + 1
            while j < len(text) and text[j] in " \t\r\n":
                j += 1
            if j < len(text) and text[j] in "}]":
                pass  # drop the comma; whitespace is re-emitted by the loop
            else:
                out.append(ch)
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def _escape_control(text: str) -> str:
    """Escape raw control characters inside string literals."""
    replacements = {"\n": "\\n", "\t": "\\t", "\r": "\\r"}
    out: list[str] = []
    in_str = False
    i = 0
    while i < len(text):
        ch = text[i]
        if in_str:
            if ch == "\\" and i + 1 < len(text):
                out.append(ch)
                out.append(text[i + 1])
                i += 2
                continue
            if ch == '"':
                in_str = False
                out.append(ch)
            elif ch in replacements:
                out.append(replacements[ch])
            elif ord(ch) < 0x20:
                out.append(f"\\u{ord(ch):04x}")
            else:
                out.append(ch)
        else:
            if ch == '"':
                in_str = True
            out.append(ch)
        i += 1
    return "".join(out)


def _escape_backslash(text: str) -> str:
    """Double backslashes that do not begin a legal escape sequence."""
    out: list[str] = []
    in_str = False
    i = 0
    while i < len(text):
        ch = text[i]
        if in_str:
            if ch == "\\":
                nxt = text[i + 1] if i + 1 < len(text) else ""
                if nxt in _VALID_ESCAPES:
                    out.append(ch)
                    out.append(nxt)
                    i += 2
                    continue
                out.append("\\\\")
            elif ch == '"':
                in_str = False
                out.append(ch)
            else:
                out.append(ch)
        else:
            if ch == '"':
                in_str = True
            out.append(ch)
        i += 1
    return "".join(out)


def _truncation_close(text: str) -> str:
    """Close strings and brackets left open by a cut-off response."""
    stack: list[str] = []
    in_str = False
    i = 0
    while i < len(text):
        ch = text[i]
        if in_str:
            if ch == "\\":
                i += 2
                continue
            if ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch in "{[":
            stack.append(ch)
        elif ch in "}]":
            if stack:
                stack.pop()
        i += 1
    if not in_str and not stack:
        return text
    result = text
    if in_str:
        result += '"'
    tail = result.rstrip()
    if tail.endswith(":"):
        result = tail + " null"
    elif tail.endswith(","):
        result = tail[:-1]
    for opener in reversed(stack):
        result += "}" if opener == "{" else "]"
    return result


_RULES: tuple[tuple[str, Callable[[str], str]], ...] = (
    ("strip_bom", _strip_bom),
    ("strip_prose", _strip_prose),
    ("smart_quotes", _smart_quotes),
    ("trailing_commas", _trailing_commas),
    ("escape_control", _escape_control),
    ("escape_backslash", _escape_backslash),
    ("truncation_close", _truncation_close),
)


def repair_json(text: str) -> tuple[str, RepairReport]:
    """Run the fixed-order rule pipeline over almost-JSON text.

    Valid input comes back untouched. If the pipeline fails to produce text
    that strict-parses, the original text comes back with an empty report,
    so repairing repaired output never applies further rules.
    """
    if _parses(text):
        return text, RepairReport(before_len=len(text), after_len=len(text))
    candidate = text
    applied: list[str] = []
    for name, rule in _RULES:
        changed = rule(candidate)
        if changed != candidate:
            applied.append(name)
            candidate = changed
    if applied and _parses(candidate):
        return candidate, RepairReport(
            rules_applied=tuple(applied),
            changed=True,
            before_len=len(text),
            after_len=len(candidate),
        )
    return text, RepairReport(before_len=len(text), after_len=len(text))


# --- file trees ---------------------------------------------------------------

_DRIVE_PREFIX = re.compile(r"^[A-Za-z]:$")


def check_path_key(key: Any) -> str | None:
    """Reason the key is unsafe as a relative file path, or None if safe."""
    if not isinstance(key, str) or not key:
        return "empty or non-text path"
    if key.startswith("/"):
        return "absolute path"
    if "\\" in key:
        return "backslash separator"
    if any(ord(ch) < 0x20 or ch == "\x7f" for ch in key):
        return "control character in path"
    segments = key.split("/")
    if _DRIVE_PREFIX.match(segments[0]):
        return "drive-letter path"
    for segment in segments:
        if segment == "":
            return "empty path segment"
        if segment in (".", ".."):
            return "dot segment in path"
    return None


@dataclass(frozen=True)
class FileTree:
    """Relative file paths mapped to text contents, iterated lexicographically."""

    entries: dict[str, str] = field(default_factory=dict)
    root_label: str = DEFAULT_ROOT_LABEL

    def __post_init__(self):
        ordered: dict[str, str] = {}
        for key in sorted(self.entries):
            reason = check_path_key(key)
            if reason is not None:
                raise TreeError(f"unsafe path {key!r}: {reason}", key=key)
            value = self.entries[key]
            if not isinstance(value, str):
                raise TreeError(
                    f"entry {key!r} has non-text content ({type(value).__name__})",
                    key=key,
                )
            ordered[key] = value
        object.__setattr__(self, "entries", ordered)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __getitem__(self, key: str) -> str:
        return self.entries[key]

    def paths(self) -> list[str]:
        return list(self.entries)

    def items(self) -> Iterator[tuple[str, str]]:
        return iter(self.entries.items())


def parse_filetree(json_text: str, root_label: str = DEFAULT_ROOT_LABEL) -> FileTree:
    """Strict-parse JSON text into a FileTree.

    The text must already be valid JSON (run repair_json first for model
    output) and must be one flat object whose values are all strings.
    """
    try:
        data = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise TreeError(f"tree JSON does not parse: {exc}")
    if not isinstance(data, dict):
        raise TreeError(f"tree JSON must be an object, got {type(data).__name__}")
    return FileTree(entries=data, root_label=root_label)


def serialize_filetree(tree: FileTree) -> str:
    return json.dumps(dict(tree.items()), sort_keys=True, indent=2,
                      ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class TreeFinding:
    code: str
    key: str
    message: str

    def __str__(self) -> str:
        return f"{self.key}: {self.message}" if self.key else self.message


_COMPOSE_NAMES = ("docker-compose.yml", "docker-compose.yaml",
                  "compose.yml", "compose.yaml")
PATH_TOKEN = re.compile(r"[\w./-]*\w\.\w+")


def compose_file_path(tree: FileTree) -> str | None:
    for path in tree.paths():
        if path.rsplit("/", 1)[-1] in _COMPOSE_NAMES:
            return path
    return None


def validate_tree(tree: FileTree, directives: Any = None) -> list[TreeFinding]:
    """Cross-entry invariants, plus required-entry checks when directives
    are supplied (a compose file, and an entry point named by the layout)."""
    findings: list[TreeFinding] = []
    paths = tree.paths()
    for path in paths:
        # sorted order puts any key under path/ at the insertion point of the
        # prefix itself, so one bisect probe per path finds all conflicts
        prefix = path + "/"
        idx = bisect.bisect_left(paths, prefix)
        if idx < len(paths) and paths[idx].startswith(prefix):
            findings.append(TreeFinding(
                "path_conflict", path,
                f"{path!r} is both a file and a directory prefix"))
    if directives is not None:
        if compose_file_path(tree) is None:
            findings.append(TreeFinding(
                "missing_container_descriptor", "", "missing container descriptor"))
        layout_paths = [t for t in PATH_TOKEN.findall(directives.folder_layout)
                        if check_path_key(t) is None
                        and t.rsplit("/", 1)[-1] not in _COMPOSE_NAMES]
        if layout_paths and not any(p in tree for p in layout_paths):
            findings.append(TreeFinding(
                "missing_entry_point", "",
                "missing entry point: none of the paths named in the folder "
                "layout exist in the tree"))
    return findings


@dataclass(frozen=True)
class WriteReport:
    files_written: int = 0
    bytes_written: int = 0
    created_dirs: tuple[str, ...] = ()
    skipped_identical: int = 0


def materialize(tree: FileTree, workspace_root: str | Path) -> WriteReport:
    """Write every entry under workspace_root, byte-exact and idempotent.

    Entries whose on-disk bytes already match are skipped. Defense in depth:
    even though FileTree keys are pre-validated, every resolved target is
    re-checked to sit inside workspace_root before any write.
    """
    root = Path(workspace_root)
    if not root.is_dir():
        raise TreeError(f"workspace root {root} is not a directory")
    conflicts = [f for f in validate_tree(tree) if f.code == "path_conflict"]
    if conflicts:
        raise TreeError("tree fails validation: " + "; ".join(map(str, conflicts)),
                        key=conflicts[0].key)
    root_resolved = root.resolve()
    files_written = 0
    bytes_written = 0
    skipped = 0
    created: list[str] = []
    for path, content in tree.items():
        target = root / path
        resolved = target.resolve()
        if root_resolved != resolved and root_resolved not in resolved.parents:
            raise TreeError(f"entry {path!r} escapes the workspace root", key=path)
        missing: list[Path] = []
        parent = target.parent
        while not parent.exists() and parent != root:
            missing.append(parent)
            parent = parent.parent
        try:
            if missing:
                target.parent.mkdir(parents=True, exist_ok=True)
                created.extend(str(d.relative_to(root)) for d in reversed(missing))
            payload = content.encode("utf-8")
            if target.exists() and target.read_bytes() == payload:
                skipped += 1
                continue
            target.write_bytes(payload)
            files_written += 1
            bytes_written += len(payload)
        except OSError as exc:
            raise TreeError(
                f"write failed at {path!r} after {files_written} files: {exc}",
                key=path)
    return WriteReport(files_written=files_written, bytes_written=bytes_written,
                       created_dirs=tuple(created), skipped_identical=skipped)


def merge_update(base: FileTree, patch: FileTree,
                 deletions: Iterable[str] = ()) -> FileTree:
    """Base overridden by patch, minus deletions; invariants re-checked."""
    deletions = list(deletions)
    for path in deletions:
        if path not in base:
            raise TreeError(f"deletion of unknown path {path!r}", key=path)
    merged: dict[str, str] = dict(base.items())
    merged.update(dict(patch.items()))
    for path in deletions:
        merged.pop(path, None)
    result = FileTree(entries=merged, root_label=base.root_label)
    conflicts = validate_tree(result)
    if conflicts:
        raise TreeError(
            "merge result fails validation: " + "; ".join(map(str, conflicts)),
            key=conflicts[0].key)
    return result
