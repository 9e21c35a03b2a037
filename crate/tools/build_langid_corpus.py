#!/usr/bin/env python3
"""Build language-identification training text and a held-out snippet set
from gettext catalogs (.po files) found under the given directories.

Usage:
    build_langid_corpus.py OUT_DIR HELDOUT_JSONL SRC_DIR [SRC_DIR ...]

Writes OUT_DIR/<lang>.txt (one translated string per line) and a JSONL file
of held-out snippets {"lang": ..., "text": ...}, each at least 100 words,
drawn from strings that never appear in the training text.
"""

import json
import random
import re
import sys
from collections import defaultdict
from pathlib import Path

LOCALE_RE = re.compile(r"/locale/([^/]+)/LC_MESSAGES/")
PLACEHOLDER_RE = re.compile(r"%\([^)]*\)[sdif]|%[sdif]|\{[^}]*\}|<[^>]+>|&\w+;|https?://\S+")
HELDOUT_LANGS = ["en", "ru", "es", "de", "fr", "pt", "it", "nl", "pl", "tr"]
SNIPPETS_PER_LANG = 50
SNIPPET_WORDS = 100
HELDOUT_FRACTION = 0.3
SKIP = {"ia", "io", "eo", "ast", "kab", "udm", "os", "br", "ckb", "ug", "tt", "ky", "tg", "tk"}


def unquote(s):
    return json.loads(s) if s.startswith('"') else s


def msgstrs(path):
    """Translated strings of one catalog, fuzzy entries skipped."""
    out = []
    cur = None
    fuzzy = False
    for line in path.read_text(encoding="utf-8", errors="ignore").splitlines():
        line = line.strip()
        if line.startswith("#,") and "fuzzy" in line:
            fuzzy = True
        elif line.startswith("msgstr"):
            cur = [unquote(line.split(" ", 1)[1])] if " " in line else [""]
        elif line.startswith('"') and cur is not None:
            cur.append(unquote(line))
        else:
            if cur is not None:
                if not fuzzy:
                    out.append("".join(cur))
                cur = None
            if line.startswith("msgid"):
                fuzzy = False
    if cur is not None and not fuzzy:
        out.append("".join(cur))
    return out


def source_strings(path):
    """msgid strings, used as English text."""
    out = []
    cur = None
    for line in path.read_text(encoding="utf-8", errors="ignore").splitlines():
        line = line.strip()
        if line.startswith("msgid ") or line.startswith("msgid_plural "):
            if cur is not None:
                out.append("".join(cur))
            cur = [unquote(line.split(" ", 1)[1])]
        elif line.startswith('"') and cur is not None:
            cur.append(unquote(line))
        elif cur is not None:
            out.append("".join(cur))
            cur = None
    return out


def clean(s):
    s = PLACEHOLDER_RE.sub(" ", s.replace("\\n", " ").replace("\n", " "))
    s = re.sub(r"[_&]", "", s)
    return " ".join(s.split())


def lang_of(path):
    m = LOCALE_RE.search(str(path).replace("\\", "/"))
    if not m:
        return None
    return m.group(1).replace("-", "_").split("_")[0].lower()


def main():
    out_dir, heldout_path, *srcs = sys.argv[1:]
    by_lang = defaultdict(set)
    english = set()
    for src in srcs:
        for po in sorted(Path(src).rglob("*.po")):
            lang = lang_of(po)
            if lang is None or lang in SKIP:
                continue
            for s in msgstrs(po):
                c = clean(s)
                if len(c.split()) >= 2:
                    by_lang[lang].add(c)
            for s in source_strings(po):
                c = clean(s)
                if len(c.split()) >= 2:
                    english.add(c)
    by_lang["en"] |= english
    rng = random.Random(20240301)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    heldout = []
    for lang in sorted(by_lang):
        strings = sorted(by_lang[lang])
        rng.shuffle(strings)
        words = sum(len(s.split()) for s in strings)
        if words < 8000:
            continue
        train = strings
        if lang in HELDOUT_LANGS:
            cut = int(len(strings) * HELDOUT_FRACTION)
            held, train = strings[:cut], strings[cut:]
            snippet = []
            for s in held:
                snippet.extend(s.split())
                if len(snippet) >= SNIPPET_WORDS:
                    heldout.append({"lang": lang, "text": " ".join(snippet)})
                    snippet = []
                    if sum(1 for h in heldout if h["lang"] == lang) == SNIPPETS_PER_LANG:
                        break
        Path(out_dir, f"{lang}.txt").write_text("\n".join(train) + "\n", encoding="utf-8")
        print(lang, len(train), "strings", words, "words", file=sys.stderr)
    with open(heldout_path, "w", encoding="utf-8") as f:
        for h in heldout:
            f.write(json.dumps(h, ensure_ascii=False) + "\n")
    counts = defaultdict(int)
    for h in heldout:
        counts[h["lang"]] += 1
    print("heldout", dict(counts), file=sys.stderr)


if __name__ == "__main__":
    main()
