#!/usr/bin/env python3
"""Regenerates the synthetic tweet fixtures in this directory.

Output is deterministic: rerunning rewrites byte-identical files.
"""

import itertools
import random
import re
import unicodedata
from pathlib import Path

ROOT = Path(__file__).resolve().parent
rng = random.Random(20240611)

EN = {
    "subjects": [
        "the new phone", "this movie", "the concert", "the match", "the update",
        "my coffee", "the weather", "the train", "that book", "this song",
        "the hotel", "the keynote", "the finale", "the app", "the pizza",
    ],
    "positive": [
        "great", "amazing", "awesome", "wonderful", "excellent", "fantastic",
        "brilliant", "lovely", "perfect", "superb",
    ],
    "negative": [
        "terrible", "awful", "horrible", "boring", "disappointing", "broken",
        "useless", "painful", "annoying", "dreadful",
    ],
    "neutral": [
        "starts at", "is scheduled for", "moves to", "was announced for",
        "is listed for", "opens at", "is expected around", "gets reviewed at",
    ],
    "tails": [
        "today", "tonight", "this morning", "on monday", "on friday",
        "this weekend", "again", "so far", "this week", "right now",
    ],
    "times": ["9am", "noon", "3pm", "6pm", "8pm", "midnight", "10am", "5pm"],
    "pos_templates": ["{s} was {w} {t}", "loving how {w} {s} is {t}", "{s} is {w} {t}"],
    "neg_templates": ["{s} was {w} {t}", "so tired of how {w} {s} is {t}", "{s} is {w} {t}"],
    "neu_templates": ["{s} {w} {x} {t}", "reminder {s} {w} {x} {t}"],
    "hashtags": ["#news", "#tech", "#sports", "#music", "#monday", "#travel"],
    "emoji": {"positive": "\U0001F600", "negative": "\U0001F620", "neutral": "\U0001F4C5"},
}

AR = {
    "subjects": [
        "الفيلم", "المباراة", "الخدمة", "المطعم", "الجو", "الهاتف", "الكتاب",
        "الحفل", "التطبيق", "الطريق", "الفندق", "المسلسل", "القهوة", "الرحلة",
        "المتجر",
    ],
    "positive": [
        "رائع", "جميل", "ممتاز", "مذهل", "عظيم", "حلو", "مبهج", "مميز", "رهيب",
        "لطيف",
    ],
    "negative": [
        "سيء", "فظيع", "ممل", "مزعج", "كارثي", "محبط", "رديء", "مؤلم", "بطيء",
        "مخيب",
    ],
    "neutral": [
        "يبدأ الساعة", "موعده الساعة", "ينتقل الساعة", "أعلن عنه الساعة",
        "يعرض الساعة", "يفتح الساعة", "يراجع الساعة", "يصل الساعة",
    ],
    "tails": [
        "اليوم", "الليلة", "هذا الصباح", "يوم السبت", "يوم الأحد", "يوم الاثنين",
        "يوم الجمعة", "هذا الأسبوع", "الآن", "مرة أخرى",
    ],
    "times": ["٩", "١٠", "١١", "١٢", "٣", "٥", "٦", "٨"],
    "pos_templates": ["{s} {w} {t}", "والله {s} {w} {t}", "{s} كان {w} {t}"],
    "neg_templates": ["{s} {w} {t}", "للأسف {s} {w} {t}", "{s} كان {w} {t}"],
    "neu_templates": ["{s} {w} {x} {t}", "تنبيه {s} {w} {x} {t}"],
    "hashtags": ["#السعودية", "#مصر", "#رياضة", "#اخبار", "#تقنية", "#سفر"],
    "emoji": {"positive": "\U0001F60D", "negative": "\U0001F621", "neutral": "\U0001F4CC"},
}

# ASTD objective rows: plain news-like statements.
AR_OBJECTIVE = [
    "{s} {w} {x} حسب البيان {t}",
]

seen = set()


def key(text):
    """Approximates the pipeline's dedup key: no URLs, letters/digits/@#_' only, lowercased."""
    text = re.sub(r"(?i)(?:https?://|www\.)\S+", "", text)
    kept = "".join(
        c for c in text
        if c in "@#_'’" or not unicodedata.category(c).startswith(("S", "P"))
    )
    return " ".join(kept.split()).lower()


def pools(lex):
    """All distinct core sentences per label, shuffled once."""
    out = {}
    for label, words, templates in [
        ("positive", lex["positive"], lex["pos_templates"]),
        ("negative", lex["negative"], lex["neg_templates"]),
    ]:
        combos = [
            tpl.format(s=s, w=w, t=t)
            for tpl, s, w, t in itertools.product(templates, lex["subjects"], words, lex["tails"])
        ]
        rng.shuffle(combos)
        out[label] = combos
    combos = [
        tpl.format(s=s, w=w, x=x, t=t)
        for tpl, s, w, x, t in itertools.product(
            lex["neu_templates"], lex["subjects"], lex["neutral"], lex["times"], lex["tails"]
        )
    ]
    rng.shuffle(combos)
    out["neutral"] = combos
    return out


def decorate(text, label, lex):
    if rng.random() < 0.3:
        text = f"@user_{rng.randint(1, 99)} {text}"
    if rng.random() < 0.2:
        text = f"{text} {rng.choice(lex['hashtags'])}"
    if rng.random() < 0.2:
        text = f"{text} {lex['emoji'][label]}"
    if rng.random() < 0.15:
        text = f"{text}!!"
    if rng.random() < 0.2:
        text = f"{text} https://t.co/{rng.randrange(16**8):08x}"
    return text


def draw(pool, label, lex):
    while True:
        core = pool[label].pop()
        k = key(core)
        if k not in seen:
            seen.add(k)
            return decorate(core, label, lex)


def sample(pool, lex, counts, prefix):
    rows = []
    for label, n in zip(["positive", "negative", "neutral"], counts):
        rows += [(label, draw(pool, label, lex)) for _ in range(n)]
    rng.shuffle(rows)
    return [(f"{prefix}{i:04d}", label, text) for i, (label, text) in enumerate(rows, 1)]


def write_semeval(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write("\t".join(row) + "\n")


def main():
    en = pools(EN)
    english = {
        "twitter-2013train": ((14, 10, 16), "en13tr-"),
        "twitter-2013test": ((7, 6, 7), "en13te-"),
        "twitter-2014test": ((7, 6, 7), "en14te-"),
        "twitter-2015train": ((10, 8, 12), "en15tr-"),
        "twitter-2016train": ((14, 12, 14), "en16tr-"),
        "twitter-2017test": ((16, 16, 18), "en17te-"),
    }
    for name, (counts, prefix) in english.items():
        write_semeval(ROOT / "en" / f"{name}.tsv", sample(en, EN, counts, prefix))

    ar = pools(AR)
    arabic = {
        "semeval2017-ar-A-train": ((16, 18, 16), "arA-"),
        "semeval2017-ar-B-train": ((10, 10, 10), "arB-"),
        "semeval2017-ar-D-train": ((10, 10, 10), "arD-"),
        "semeval2017-ar-A-test": ((13, 14, 13), "arT-"),
    }
    written = {}
    for name, (counts, prefix) in arabic.items():
        rows = sample(ar, AR, counts, prefix)
        written[name] = rows
        write_semeval(ROOT / "ar" / f"{name}.tsv", rows)

    # ASTD: 62 fresh rows, 15 objective rows, and 3 repeats of SemEval
    # training tweets that the merge must drop as duplicates.
    astd = [(text, {"positive": "POS", "negative": "NEG", "neutral": "NEUTRAL"}[label])
            for _, label, text in sample(ar, AR, (20, 20, 22), "")]
    objective = [
        tpl.format(s=s, w=w, x=x, t=t)
        for tpl, s, w, x, t in itertools.product(
            AR_OBJECTIVE, AR["subjects"], AR["neutral"], AR["times"], AR["tails"]
        )
    ]
    rng.shuffle(objective)
    astd += [(text, "OBJ") for text in objective[:15]]
    repeats = rng.sample(written["semeval2017-ar-A-train"], 3)
    astd += [(text, {"positive": "POS", "negative": "NEG", "neutral": "NEUTRAL"}[label])
             for _, label, text in repeats]
    rng.shuffle(astd)
    with open(ROOT / "ar" / "astd.tsv", "w", encoding="utf-8", newline="\n") as f:
        for text, label in astd:
            f.write(f"{text}\t{label}\n")

    overfit = sample(en, EN, (11, 11, 10), "of-")
    write_semeval(ROOT / "overfit" / "en-32.tsv", overfit)


if __name__ == "__main__":
    main()
