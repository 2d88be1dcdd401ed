"""Rule-based part-of-speech proxy.

Closed-class word lists plus suffix heuristics; no parser dependency.
The tagger only has to be deterministic and discriminative enough for
pattern comparison, not linguistically complete.
"""

from __future__ import annotations

import re

_DETERMINERS = {
    "a", "an", "the", "this", "that", "these", "those", "some", "any",
    "each", "every", "no", "another", "such",
}
_PREPOSITIONS = {
    "of", "in", "on", "at", "by", "for", "with", "from", "to", "into",
    "over", "under", "between", "through", "during", "against", "about",
    "near", "after", "before", "within", "without", "across", "along",
    "around", "behind", "beyond", "off", "onto", "upon", "toward", "towards",
}
_PRONOUNS = {
    "i", "you", "he", "she", "it", "we", "they", "me", "him", "her", "us",
    "them", "his", "hers", "its", "their", "theirs", "our", "ours", "my",
    "mine", "your", "yours", "who", "whom", "whose", "which", "what",
}
_CONJUNCTIONS = {"and", "or", "but", "nor", "so", "yet", "while", "because",
                 "although", "though", "if", "when", "where", "as", "than",
                 "that", "whether"}
_AUXILIARIES = {
    "is", "are", "was", "were", "be", "been", "being", "am",
    "has", "have", "had", "having",
    "do", "does", "did", "done",
    "will", "would", "can", "could", "shall", "should", "may", "might",
    "must",
}
_ADVERBS = {"not", "very", "also", "now", "then", "here", "there", "too",
            "just", "still", "never", "always", "often", "again", "quite",
            "rather", "soon", "already"}
_VERB_SUFFIXES = ("ing", "ed", "ify", "ize", "ise", "ate")
_NOUN_SUFFIXES = ("tion", "sion", "ment", "ness", "ity", "ship", "ance",
                  "ence", "ism", "ist", "er", "or", "age", "hood")
_ADJ_SUFFIXES = ("ous", "ful", "ive", "al", "ic", "able", "ible", "ant",
                 "ent", "less", "ish", "ary")
_NUM_RE = re.compile(r"^\d[\d.,:-]*$")

_COMMON_VERBS = {
    "led", "lead", "leads", "said", "says", "say", "made", "make", "makes",
    "won", "win", "wins", "lost", "lose", "plays", "play", "played",
    "lives", "live", "lived", "works", "work", "worked", "born", "beat",
    "met", "meet", "joined", "join", "joins", "moved", "move", "moves",
    "founded", "found", "resided", "reside", "resides", "grew", "visited",
    "visit", "visits", "runs", "run", "ran", "serves", "serve", "served",
    "studied", "studies", "study", "teaches", "taught", "teach", "owns",
    "own", "owned", "sits", "sat", "stands", "stood", "defeated", "defeat",
}


def pos_tag(surface: str) -> str:
    """Tag a single token with a coarse part-of-speech label."""
    if not surface:
        return "X"
    if not any(ch.isalnum() for ch in surface):
        return "PUNCT"
    if _NUM_RE.match(surface):
        return "NUM"
    lower = surface.lower()
    if lower in _DETERMINERS:
        return "DET"
    if lower in _PREPOSITIONS:
        return "ADP"
    if lower in _PRONOUNS:
        return "PRON"
    if lower in _CONJUNCTIONS:
        return "CCONJ"
    if lower in _AUXILIARIES:
        return "AUX"
    if lower in _ADVERBS:
        return "ADV"
    if lower in _COMMON_VERBS:
        return "VERB"
    if surface[0].isupper():
        return "PROPN"
    if lower.endswith("ly") and len(lower) > 3:
        return "ADV"
    for suf in _VERB_SUFFIXES:
        if lower.endswith(suf) and len(lower) > len(suf) + 1:
            return "VERB"
    for suf in _ADJ_SUFFIXES:
        if lower.endswith(suf) and len(lower) > len(suf) + 1:
            return "ADJ"
    for suf in _NOUN_SUFFIXES:
        if lower.endswith(suf) and len(lower) > len(suf) + 1:
            return "NOUN"
    return "NOUN"


def pos_pattern(surfaces: list[str]) -> list[str]:
    return [pos_tag(s) for s in surfaces]


def edit_distance(a: list[str], b: list[str]) -> int:
    """Plain Levenshtein over tag sequences."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cost = 0 if x == y else 1
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost))
        prev = cur
    return prev[len(b)]


def pattern_similarity(a: list[str], b: list[str]) -> float:
    """1 - normalized edit distance; 1.0 for identical patterns."""
    if not a and not b:
        return 1.0
    return 1.0 - edit_distance(a, b) / max(len(a), len(b))
