"""Aho-Corasick automaton for simultaneous multi-pattern byte search.

One pass over the data reports every occurrence (including overlapping ones)
of every needle; blocklists carry thousands of text patterns, so per-pattern
rescans would be quadratic in practice.
"""

from __future__ import annotations


class AhoCorasick:
    def __init__(self, needles: list[bytes]):
        self.needles = list(needles)
        # nodes as dict transitions; output holds needle indices ending here
        self.goto = [{}]
        self.fail = [0]
        self.output = [[]]
        for idx, needle in enumerate(self.needles):
            if not needle:
                raise ValueError("empty needle")
            node = 0
            for b in needle:
                nxt = self.goto[node].get(b)
                if nxt is None:
                    self.goto.append({})
                    self.fail.append(0)
                    self.output.append([])
                    nxt = len(self.goto) - 1
                    self.goto[node][b] = nxt
                node = nxt
            self.output[node].append(idx)
        self._build_failure_links()

    def _build_failure_links(self):
        from collections import deque

        queue = deque()
        for node in self.goto[0].values():
            self.fail[node] = 0
            queue.append(node)
        while queue:
            cur = queue.popleft()
            for b, nxt in self.goto[cur].items():
                queue.append(nxt)
                f = self.fail[cur]
                while f and b not in self.goto[f]:
                    f = self.fail[f]
                self.fail[nxt] = self.goto[f].get(b, 0)
                if self.fail[nxt] == nxt:
                    self.fail[nxt] = 0
                self.output[nxt] = self.output[nxt] + self.output[self.fail[nxt]]

    def find_all(self, data: bytes):
        """Yield (needle_index, start_offset) for every occurrence in data."""
        goto, fail, output = self.goto, self.fail, self.output
        needles = self.needles
        node = 0
        for pos, b in enumerate(data):
            while node and b not in goto[node]:
                node = fail[node]
            node = goto[node].get(b, 0)
            if output[node]:
                for idx in output[node]:
                    yield idx, pos - len(needles[idx]) + 1
