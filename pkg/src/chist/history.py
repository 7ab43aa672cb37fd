"""Transactional history data model, the .chist file format, and derived orders."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Union

Value = Union[int, str, None]  # None encodes nil, the never-written state

HEADER = "#chist v1"


class HistoryError(Exception):
    """Base class for history parse/validation failures."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedEvent(HistoryError):
    pass


class UnmatchedInvocation(HistoryError):
    pass


class InterleavedSession(HistoryError):
    pass


class DuplicateSeq(HistoryError):
    pass


class ItemKind(str, Enum):
    REGISTER = "register"
    COUNTER = "counter"
    KV = "kv"


class OpKind(str, Enum):
    READ = "read"
    WRITE = "write"
    INC = "inc"
    DEC = "dec"
    PUT = "put"
    GET = "get"

    @property
    def is_update(self) -> bool:
        return self in (OpKind.WRITE, OpKind.INC, OpKind.DEC, OpKind.PUT)

    @property
    def is_read(self) -> bool:
        return self in (OpKind.READ, OpKind.GET)

    @property
    def takes_arg(self) -> bool:
        return self in (OpKind.WRITE, OpKind.PUT)


# update/read op kinds admitted per item kind
_UPDATES_FOR = {
    ItemKind.REGISTER: {OpKind.WRITE},
    ItemKind.COUNTER: {OpKind.INC, OpKind.DEC},
    ItemKind.KV: {OpKind.PUT},
}
_READS_FOR = {
    ItemKind.REGISTER: {OpKind.READ},
    ItemKind.COUNTER: {OpKind.READ},
    ItemKind.KV: {OpKind.GET},
}


@dataclass(frozen=True)
class Op:
    kind: OpKind
    key: str
    arg: Value = None
    ret: Value = None

    @property
    def delta(self) -> int:
        """Implicit counter delta; inc/dec only."""
        if self.kind is OpKind.INC:
            return 1
        if self.kind is OpKind.DEC:
            return -1
        raise ValueError(f"{self.kind.value} carries no delta")


@dataclass(frozen=True)
class Event:
    seq: int
    is_invocation: bool
    proc: str
    txn: int
    op: Op

    @property
    def kind_token(self) -> str:
        return "inv" if self.is_invocation else "res"


@dataclass(frozen=True)
class TxnOp:
    """One completed operation inside a transaction."""

    op: Op
    inv_seq: int
    res_seq: int


@dataclass(frozen=True)
class Transaction:
    id: int
    proc: str
    ops: tuple[TxnOp, ...]

    @property
    def first_inv(self) -> int:
        return self.ops[0].inv_seq

    @property
    def last_res(self) -> int:
        return max(o.res_seq for o in self.ops)

    def update_keys(self) -> tuple[str, ...]:
        seen = []
        for o in self.ops:
            if o.op.kind.is_update and o.op.key not in seen:
                seen.append(o.op.key)
        return tuple(seen)

    def read_keys(self) -> tuple[str, ...]:
        seen = []
        for o in self.ops:
            if o.op.kind.is_read and o.op.key not in seen:
                seen.append(o.op.key)
        return tuple(seen)


class RelationKind(str, Enum):
    REALTIME = "realtime"
    SESSION = "session"
    READS_FROM = "reads-from"
    VERSION_ORDER = "version-order"


@dataclass(frozen=True)
class Relation:
    """A binary relation over transaction ids."""

    kind: RelationKind
    edges: frozenset[tuple[int, int]]
    key: Optional[str] = None  # set for version-order(key)

    def holds(self, a: int, b: int) -> bool:
        return (a, b) in self.edges

    def successors(self, a: int) -> set[int]:
        return {y for (x, y) in self.edges if x == a}


def transitive_closure(edges: Iterable[tuple[int, int]]) -> frozenset[tuple[int, int]]:
    succ: dict[int, set[int]] = {}
    for a, b in edges:
        succ.setdefault(a, set()).add(b)
    closed: set[tuple[int, int]] = set()
    for start in list(succ):
        stack = list(succ.get(start, ()))
        seen: set[int] = set()
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            closed.add((start, node))
            stack.extend(succ.get(node, ()))
    return frozenset(closed)


@dataclass(frozen=True)
class History:
    events: tuple[Event, ...]
    txns: tuple[Transaction, ...]
    item_kinds: dict[str, ItemKind] = field(default_factory=dict, compare=False)
    declared_items: tuple[tuple[str, ItemKind], ...] = ()

    def item_kind(self, key: str) -> ItemKind:
        return self.item_kinds.get(key, ItemKind.KV)

    def txn(self, txn_id: int) -> Transaction:
        return self._txn_index[txn_id]

    @property
    def _txn_index(self) -> dict[int, Transaction]:
        idx = getattr(self, "_txn_index_cache", None)
        if idx is None:
            idx = {t.id: t for t in self.txns}
            object.__setattr__(self, "_txn_index_cache", idx)
        return idx

    def sessions(self) -> dict[str, list[Transaction]]:
        """Transactions grouped per session, in invocation order."""
        by_proc: dict[str, list[Transaction]] = {}
        for t in sorted(self.txns, key=lambda t: t.first_inv):
            by_proc.setdefault(t.proc, []).append(t)
        return by_proc

    def keys(self) -> list[str]:
        seen: list[str] = []
        for e in self.events:
            if e.op.key not in seen:
                seen.append(e.op.key)
        return seen

    def single_op(self) -> bool:
        return all(len(t.ops) == 1 for t in self.txns)

    def concurrent(self, a: int, b: int) -> bool:
        rt = derive_realtime(self).edges
        return a != b and (a, b) not in rt and (b, a) not in rt


def format_value(v: Value) -> str:
    if v is None:
        return "nil"
    if isinstance(v, int):
        return str(v)
    escaped = v.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def parse_value(token: str, line: Optional[int] = None) -> Value:
    if token == "nil":
        return None
    if token.startswith('"'):
        if len(token) < 2 or not token.endswith('"'):
            raise MalformedEvent(f"unterminated string {token!r}", line)
        body = token[1:-1]
        out = []
        i = 0
        while i < len(body):
            c = body[i]
            if c == "\\":
                if i + 1 >= len(body):
                    raise MalformedEvent(f"dangling escape in {token!r}", line)
                out.append(body[i + 1])
                i += 2
            else:
                out.append(c)
                i += 1
        return "".join(out)
    try:
        return int(token, 10)
    except ValueError:
        raise MalformedEvent(f"bad value token {token!r}", line) from None


def _tokenize(text: str, line: int) -> list[str]:
    """Whitespace-split honouring double-quoted string values."""
    tokens: list[str] = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        if text[i] == '"':
            j = i + 1
            while j < n:
                if text[j] == "\\":
                    j += 2
                    continue
                if text[j] == '"':
                    break
                j += 1
            if j >= n:
                raise MalformedEvent("unterminated string", line)
            tokens.append(text[i : j + 1])
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace():
                j += 1
            tokens.append(text[i:j])
            i = j
    return tokens


class _OpenTxn:
    __slots__ = ("id", "ops", "pending")

    def __init__(self, txn_id: int):
        self.id = txn_id
        self.ops: list[TxnOp] = []
        self.pending: Optional[tuple[Op, int]] = None  # (op, inv seq)


def parse_history(data: Union[bytes, str]) -> History:
    """Parse the line-oriented .chist format into a History.

    Raises MalformedEvent, UnmatchedInvocation, InterleavedSession or
    DuplicateSeq on invalid input.
    """
    if isinstance(data, bytes):
        text = data.decode("utf-8")
    else:
        text = data
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise MalformedEvent(f"missing header {HEADER!r}", 1)

    item_kinds: dict[str, ItemKind] = {}
    declared: list[tuple[str, ItemKind]] = []
    events: list[Event] = []
    seqs: set[int] = set()
    last_seq = -1

    # per-session parser state
    open_txns: dict[str, _OpenTxn] = {}
    closed_txns: dict[int, Transaction] = {}
    txn_owner: dict[int, str] = {}

    def close(proc: str) -> None:
        cur = open_txns.pop(proc, None)
        if cur is None:
            return
        closed_txns[cur.id] = Transaction(cur.id, proc, tuple(cur.ops))

    for lineno, raw in enumerate(lines[1:], start=2):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            parts = stripped.split()
            if parts[0] == "#item":
                if len(parts) != 3:
                    raise MalformedEvent("#item expects <key> <kind>", lineno)
                if events:
                    raise MalformedEvent("#item lines must precede event lines", lineno)
                try:
                    kind = ItemKind(parts[2])
                except ValueError:
                    raise MalformedEvent(f"unknown item kind {parts[2]!r}", lineno) from None
                item_kinds[parts[1]] = kind
                declared.append((parts[1], kind))
            continue

        tokens = _tokenize(stripped, lineno)
        if len(tokens) < 6:
            raise MalformedEvent("event line needs at least 6 fields", lineno)
        try:
            seq = int(tokens[0], 10)
        except ValueError:
            raise MalformedEvent(f"bad seq {tokens[0]!r}", lineno) from None
        if seq in seqs:
            raise DuplicateSeq(f"seq {seq} reused", lineno)
        if seq <= last_seq:
            raise MalformedEvent(f"seq {seq} not increasing", lineno)
        seqs.add(seq)
        last_seq = seq

        ev_kind = tokens[1]
        if ev_kind not in ("inv", "res"):
            raise MalformedEvent(f"expected inv|res, got {ev_kind!r}", lineno)
        proc = tokens[2]
        try:
            txn_id = int(tokens[3], 10)
        except ValueError:
            raise MalformedEvent(f"bad txn id {tokens[3]!r}", lineno) from None
        if txn_id < 0:
            raise MalformedEvent("txn id must be non-negative", lineno)
        try:
            op_kind = OpKind(tokens[4])
        except ValueError:
            raise MalformedEvent(f"unknown op {tokens[4]!r}", lineno) from None
        key = tokens[5]

        rest = tokens[6:]
        arg: Value = None
        ret: Value = None
        has_ret = "->" in rest
        if has_ret:
            arrow = rest.index("->")
            arg_tokens, ret_tokens = rest[:arrow], rest[arrow + 1 :]
            if len(ret_tokens) != 1:
                raise MalformedEvent("expected one value after ->", lineno)
            ret = parse_value(ret_tokens[0], lineno)
        else:
            arg_tokens = rest
        if op_kind.takes_arg:
            if len(arg_tokens) != 1:
                raise MalformedEvent(f"{op_kind.value} takes exactly one argument", lineno)
            arg = parse_value(arg_tokens[0], lineno)
        elif arg_tokens:
            raise MalformedEvent(f"{op_kind.value} takes no argument", lineno)
        if has_ret and (ev_kind == "inv" or not op_kind.is_read):
            raise MalformedEvent("only read/get responses carry ->", lineno)
        if ev_kind == "res" and op_kind.is_read and not has_ret:
            raise MalformedEvent(f"{op_kind.value} response needs -> <ret>", lineno)

        kind = item_kinds.setdefault(key, ItemKind.KV)
        allowed = _UPDATES_FOR[kind] | _READS_FOR[kind]
        if op_kind not in allowed:
            raise MalformedEvent(
                f"op {op_kind.value} not valid for {kind.value} item {key!r}", lineno
            )

        op = Op(op_kind, key, arg, ret)
        events.append(Event(seq, ev_kind == "inv", proc, txn_id, op))

        cur = open_txns.get(proc)
        if ev_kind == "inv":
            if cur is not None and cur.pending is not None:
                raise InterleavedSession(
                    f"session {proc!r} invokes while an op is open", lineno
                )
            if cur is None or cur.id != txn_id:
                if txn_id in closed_txns or (cur is None and txn_id in txn_owner and txn_owner[txn_id] == proc):
                    raise MalformedEvent(f"transaction {txn_id} reopened", lineno)
                if txn_id in txn_owner and txn_owner[txn_id] != proc:
                    raise MalformedEvent(f"transaction {txn_id} spans sessions", lineno)
                if cur is not None:
                    close(proc)
                cur = _OpenTxn(txn_id)
                open_txns[proc] = cur
                txn_owner[txn_id] = proc
            cur.pending = (op, seq)
        else:
            if cur is None or cur.pending is None:
                raise MalformedEvent(f"response with no open invocation on {proc!r}", lineno)
            if cur.id != txn_id:
                raise InterleavedSession(
                    f"response for txn {txn_id} while txn {cur.id} open on {proc!r}", lineno
                )
            pend_op, inv_seq = cur.pending
            if pend_op.kind != op.kind or pend_op.key != op.key or pend_op.arg != op.arg:
                raise MalformedEvent("response does not match open invocation", lineno)
            done = pend_op if not op.kind.is_read else Op(op.kind, op.key, op.arg, op.ret)
            cur.ops.append(TxnOp(done, inv_seq, seq))
            cur.pending = None

    for proc, cur in open_txns.items():
        if cur.pending is not None:
            raise UnmatchedInvocation(
                f"invocation at seq {cur.pending[1]} on {proc!r} has no response"
            )
    for proc in list(open_txns):
        close(proc)

    txns = tuple(sorted(closed_txns.values(), key=lambda t: t.id))
    return History(tuple(events), txns, item_kinds, tuple(declared))


def serialize_history(h: History) -> bytes:
    """Inverse of parse_history (canonical whitespace)."""
    lines = [HEADER]
    for key, kind in h.declared_items:
        lines.append(f"#item {key} {kind.value}")
    for e in h.events:
        parts = [str(e.seq), e.kind_token, e.proc, str(e.txn), e.op.kind.value, e.op.key]
        if e.op.kind.takes_arg:
            parts.append(format_value(e.op.arg))
        if not e.is_invocation and e.op.kind.is_read:
            parts.append("->")
            parts.append(format_value(e.op.ret))
        lines.append(" ".join(parts))
    return ("\n".join(lines) + "\n").encode("utf-8")


def derive_realtime(h: History) -> Relation:
    """(T, T') iff T's last response precedes T''s first invocation.

    Transitive by construction since first_inv <= last_res for every txn.
    """
    cached = getattr(h, "_realtime_cache", None)
    if cached is not None:
        return cached
    edges = set()
    for a in h.txns:
        for b in h.txns:
            if a.id != b.id and a.last_res < b.first_inv:
                edges.add((a.id, b.id))
    rel = Relation(RelationKind.REALTIME, frozenset(edges))
    object.__setattr__(h, "_realtime_cache", rel)
    return rel


def derive_session(h: History) -> Relation:
    """(T, T') iff same session and T invoked before T'."""
    edges = set()
    for txns in h.sessions().values():
        for i, a in enumerate(txns):
            for b in txns[i + 1 :]:
                edges.add((a.id, b.id))
    return Relation(RelationKind.SESSION, frozenset(edges))
