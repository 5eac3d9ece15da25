"""Builds reviews.ndjson: restaurant and app reviews with the escalation
outcome expected under config/sentiment.json.

The expected flags come from this file's own re-implementation of the
lexicon rules, kept separate from the Rust classifier on purpose.
Run from the crate root: python3 fixtures/make_reviews.py
"""
import json
import random
import re

cfg = json.load(open("config/sentiment.json"))
POS = set(cfg["positive_words"])
NEG = set(cfg["negative_words"])
THRESHOLD = cfg["threshold"]

openers = ["", "Honestly, ", "Visited last Friday. ", "Second time here. ", "Ordered delivery. ", "Quick note: "]
good = [
    "the noodles were delicious and the staff was friendly",
    "great pizza, fast delivery, would recommend",
    "lovely dinner and a pleasant host",
    "the app checkout was smooth and quick",
    "best burger in town, loved it",
    "excellent soup and fresh salad",
    "the waiter was helpful and the meal was amazing",
    "refund arrived fast, thanks for the help",
    "clean tables, nice music, happy with everything",
    "fantastic portion sizes and tasty sauces",
]
bad = [
    "the soup was cold and the waiter was rude",
    "terrible service, we waited an hour",
    "I was overcharged and the manager was unhelpful",
    "the app crashed twice at checkout",
    "stale bread and bland pasta, very disappointed",
    "dirty tables and slow staff",
    "wrong order delivered late",
    "worst pizza I have had, awful",
    "the login page is broken and support never answered",
    "my card was charged twice and nobody cares, horrible",
]
flat = [
    "the restaurant is on Main Street",
    "we came for lunch on Tuesday",
    "ordered the set menu for two",
    "I paid by card at the counter",
    "the website lists opening hours",
    "parking is behind the building",
    "they have outdoor seating in summer",
    "the menu changed in March",
]
mixed_joiners = [" but ", ", although ", "; still, ", " and yet "]


def tokens(text):
    out = []
    for w in re.split(r"[^\w']+", text):
        w = w.strip("'").lower()
        if w and not re.fullmatch(r"_+", w):
            out.append(w)
    return out


def oracle(text):
    toks = tokens(text)
    pos = sum(t in POS for t in toks)
    neg = sum(t in NEG for t in toks)
    if pos + neg == 0:
        return "neutral", 0.5
    score = (pos - neg) / (pos + neg)
    label = "positive" if score > 0 else "negative" if score < 0 else "neutral"
    return label, abs(score)


rng = random.Random(7)
texts = []
seen = set()
while len(texts) < 200:
    kind = rng.choice(["good", "good", "bad", "flat", "mixed", "mixed"])
    if kind == "good":
        body = rng.choice(good)
    elif kind == "bad":
        body = rng.choice(bad)
    elif kind == "flat":
        body = rng.choice(flat)
    else:
        a, b = rng.choice(good), rng.choice(bad)
        if rng.random() < 0.5:
            a, b = b, a
        body = a + rng.choice(mixed_joiners) + b
    opener = rng.choice(openers)
    if not opener or opener.endswith(". "):
        body = body[0].upper() + body[1:]
    text = opener + body + rng.choice([".", "!", "."])
    if text in seen:
        continue
    seen.add(text)
    texts.append(text)

with open("fixtures/reviews.ndjson", "w") as f:
    for i, text in enumerate(texts, 1):
        label, conf = oracle(text)
        escalate = label == "negative" or conf < THRESHOLD
        f.write(json.dumps({"id": i, "text": text, "label": label, "escalate": escalate}) + "\n")

print(sum(json.loads(l)["escalate"] for l in open("fixtures/reviews.ndjson")), "of 200 escalate")
