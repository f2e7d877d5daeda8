"""Independent reference models the simulator is checked against.

These are deliberately naive: lists and linear scans, no shared code with
the package beyond the trace records themselves.
"""

from collections import Counter, OrderedDict

LINE = 64


class BruteLRU:
    """Set-associative LRU cache as a list of recency-ordered lists."""

    def __init__(self, size_bytes, ways, allocate_stores=True):
        self.nsets = size_bytes // (ways * LINE)
        self.ways = ways
        self.sets = [[] for _ in range(self.nsets)]
        self.allocate_stores = allocate_stores

    def access(self, addr, is_store=False):
        line = addr // LINE
        s = self.sets[line % self.nsets]
        if line in s:
            s.remove(line)
            s.append(line)
            return True
        if is_store and not self.allocate_stores:
            return False
        if len(s) == self.ways:
            s.pop(0)
        s.append(line)
        return False

    def clear(self):
        self.sets = [[] for _ in range(self.nsets)]


def reuse_distances(lines):
    """Stack distance per reference (None for a first touch): the number of
    distinct lines touched since the previous reference to the same line.

    Uses a Fenwick tree over positions, one mark per line at its latest
    reference, so it stays fast on traces with large footprints.
    """
    n = len(lines)
    tree = [0] * (n + 1)

    def add(i, v):
        i += 1
        while i <= n:
            tree[i] += v
            i += i & -i

    def prefix(i):
        s = 0
        while i > 0:
            s += tree[i]
            i -= i & -i
        return s

    last = {}
    out = []
    for pos, ln in enumerate(lines):
        prev = last.get(ln)
        if prev is None:
            out.append(None)
        else:
            out.append(prefix(pos) - prefix(prev + 1))
            add(prev, -1)
        add(pos, 1)
        last[ln] = pos
    return out


def reuse_distances_naive(lines):
    stack = []
    out = []
    for ln in lines:
        if ln in stack:
            i = stack.index(ln)
            out.append(len(stack) - 1 - i)
            stack.pop(i)
        else:
            out.append(None)
        stack.append(ln)
    return out


def fully_assoc_misses(lines, capacity):
    """Miss count of an ideal fully associative LRU cache."""
    cache = OrderedDict()
    misses = 0
    for ln in lines:
        if ln in cache:
            cache.move_to_end(ln)
            continue
        misses += 1
        cache[ln] = True
        if len(cache) > capacity:
            cache.popitem(last=False)
    return misses


def pooling_touch_counts(width, height, channels, window, stride):
    """Reference count per input element index, by enumerating windows."""
    ow = (width - window) // stride + 1
    oh = (height - window) // stride + 1
    counts = Counter()
    for c in range(channels):
        for oy in range(oh):
            for ox in range(ow):
                for ky in range(window):
                    for kx in range(window):
                        y, x = oy * stride + ky, ox * stride + kx
                        counts[(c * height + y) * width + x] += 1
    return counts


def flat_memory(trace, payload):
    """Final memory image from applying stores in program order.

    Only valid for race-free traces, where program order within a CU plus
    kernel barriers fixes the last writer of every byte.
    """
    mem = {}
    for a in trace.accesses():
        if a.kind != 1:
            continue
        line = a.addr - a.addr % LINE
        buf = mem.setdefault(line, bytearray(LINE))
        off = a.addr - line
        buf[off:off + a.size] = payload(a)
    return {k: bytes(v) for k, v in sorted(mem.items())}
