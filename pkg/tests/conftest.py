"""Shared test helpers: a scriptable model and independent brute-force oracles."""

from __future__ import annotations

from spinedec.models import ModelQuery, ModelResponse, Prediction

_SCRIPT_SCORES = (0.6, 0.2, 0.1, 0.05)


class ScriptedModel:
    """Deterministic model with explicit next-token overrides per full path.

    Unscripted paths continue with ``(last + 1) % (vocab - 1)``, which never
    emits EOS (vocab - 1) unless scripted to. Counts ``score_tree`` calls.
    """

    def __init__(self, vocab_size: int = 16, script: dict[tuple[int, ...], int] | None = None):
        self.vocab_size = vocab_size
        self.eos_token = vocab_size - 1
        self.script = dict(script or {})
        self.calls = 0

    def _next(self, path: tuple[int, ...]) -> int:
        if path in self.script:
            return self.script[path]
        return (path[-1] + 1) % (self.vocab_size - 1)

    def _predict(self, path: tuple[int, ...]) -> Prediction:
        token = self._next(path)
        candidates = [token]
        probe = token
        while len(candidates) < min(len(_SCRIPT_SCORES), self.vocab_size):
            probe = (probe + 1) % self.vocab_size
            if probe not in candidates:
                candidates.append(probe)
        return Prediction(
            token=token,
            top_k=tuple((t, _SCRIPT_SCORES[i]) for i, t in enumerate(candidates)),
        )

    def score_tree(self, query: ModelQuery) -> ModelResponse:
        self.calls += 1
        base = tuple(query.base)
        for t in base:
            if not (0 <= t < self.vocab_size):
                raise ValueError(f"token {t} out of vocabulary")
        base_preds = [
            self._predict(base[: i + 1]) for i in range(query.scored_from, len(base))
        ]
        paths: list[tuple[int, ...]] = []
        node_preds: list[Prediction] = []
        for token, ancestors in query.nodes:
            parent_path = paths[ancestors[-1]] if ancestors else base
            path = parent_path + (token,)
            paths.append(path)
            node_preds.append(self._predict(path))
        return ModelResponse(base=tuple(base_preds), nodes=tuple(node_preds))

    def greedy_next(self, base) -> int:
        self.calls += 1
        return self._next(tuple(base))


def brute_force_match(history, lengths=(3, 4, 5), max_chain=20):
    """Independent linear-scan reimplementation of the context-match contract.

    Returns (chain, consensus, ngram_len) like MatchResult.
    """
    total = len(history)
    found: dict[int, tuple[int, ...]] = {}
    for n in lengths:
        if total < n + 1:
            continue
        suffix = tuple(history[total - n:])
        for start in range(total - n - 1, -1, -1):
            if tuple(history[start: start + n]) == suffix:
                end = min(start + n + max_chain, total - n)
                chain = tuple(history[start + n: end])
                if chain:
                    found[n] = chain
                break  # the most recent earlier occurrence decides
    if not found:
        return (), False, 0
    firsts = [c[0] for c in found.values()]
    consensus = any(firsts.count(f) >= 2 for f in set(firsts))
    best_n = max(found)
    return found[best_n], consensus, best_n


def closure_masks(tree):
    """Ancestor sets recomputed by walking parent pointers per node."""
    masks = []
    for node in tree.nodes:
        seen = set()
        parent = node.parent
        while parent != -1:
            seen.add(parent)
            parent = tree.nodes[parent].parent
        masks.append(frozenset(seen))
    return masks
