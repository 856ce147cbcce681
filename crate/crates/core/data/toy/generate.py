"""Writes the bundled toy corpus (SOV romanized source, SVO English target).

Source numbers and names use full-width characters so the half-width
normalization step has something to do. Output is deterministic.
"""

import random
from pathlib import Path

SUBJECTS = {
    "neko": "cat", "inu": "dog", "tori": "bird", "kodomo": "child",
    "sensei": "teacher", "gakusei": "student", "isha": "doctor",
}
NAMES = ["ＴＡＲＯ", "ＨＡＮＡＫＯ", "ＫＥＮ", "ＹＵＫＩ"]
OBJECTS = {
    "hon": "book", "kuruma": "car", "hana": "flower", "ringo": "apple",
    "koppu": "cup", "tegami": "letter", "pen": "pen", "kaban": "bag",
}
ADJECTIVES = {
    "ookii": "big", "chiisai": "small", "akai": "red", "aoi": "blue",
    "atarashii": "new", "furui": "old",
}
VERBS = {
    "miru": "sees", "kau": "buys", "motsu": "has", "tsukuru": "makes",
    "uru": "sells", "sagasu": "finds",
}
FULLWIDTH_DIGITS = "０１２３４５６７８９"


def noun_phrase(rng, table, allow_number):
    src_noun, tgt_noun = rng.choice(sorted(table.items()))
    src, tgt = [], []
    if allow_number and rng.random() < 0.3:
        n = rng.randint(2, 9)
        src += [FULLWIDTH_DIGITS[n], "ko", "no"]
        tgt += [str(n)]
        tgt_noun += "s"
    else:
        tgt.append("the")
    if rng.random() < 0.4:
        adj = rng.choice(sorted(ADJECTIVES))
        src.append(adj)
        tgt.append(ADJECTIVES[adj])
    return src + [src_noun], tgt + [tgt_noun]


def sentence(rng):
    if rng.random() < 0.2:
        name = rng.choice(NAMES)
        subj_src, subj_tgt = [name], [name.translate({c: c - 0xFEE0 for c in range(0xFF21, 0xFF3B)})]
    else:
        subj_src, subj_tgt = noun_phrase(rng, SUBJECTS, False)
    obj_src, obj_tgt = noun_phrase(rng, OBJECTS, True)
    verb = rng.choice(sorted(VERBS))
    src = subj_src + ["ga"] + obj_src + ["o", verb]
    tgt = subj_tgt + [VERBS[verb]] + obj_tgt
    return " ".join(src), " ".join(tgt)


def main():
    rng = random.Random(20161)
    here = Path(__file__).parent
    for split, n in [("train", 200), ("dev", 50), ("test", 50)]:
        pairs = [sentence(rng) for _ in range(n)]
        (here / f"{split}.src").write_text("".join(s + "\n" for s, _ in pairs), encoding="utf-8")
        (here / f"{split}.tgt").write_text("".join(t + "\n" for _, t in pairs), encoding="utf-8")


if __name__ == "__main__":
    main()
