"""Writes recall_cots.jsonl: chains of thought labeled by hand-written rules.

Each record lists the gold facts (entity names, the number the fact states,
hop) and, per fact, whether the chain of thought recalls it, meaning one
sentence names every entity of the fact and contains its number as a whole
number. Labels are fixed by the pattern that produced each CoT.
"""

import json
import random

PAIRS = [
    ("Nancy", "Quinn", "age", "years", "younger", "older"),
    ("Mango", "Kiwi", "price", "dollars", "cheaper", "more expensive"),
    ("Falcon", "Comet", "speed", "kilometers per hour", "slower", "faster"),
    ("Glenmoor", "Harrowby", "population", "thousand", "fewer", "more"),
    ("Saga of Lynora", "Fables of Yldora", "length", "pages", "shorter", "longer"),
    ("Draxis", "Lumora", "temperature", "kelvin", "colder", "hotter"),
]

# (pattern, first-hop recalled, second-hop recalled)
PATTERNS = [
    ("{a} has a {q} of {v} {u}. {b} is {d} {u} {down} than {a}. So the answer is {ans}.", True, True),
    ("The {q} of {a} is {v}. That is all I can find.", True, False),
    ("{b} is {d} {u} {down} than {a}, and {a} is at {v}.", True, True),
    ("I recall {a} and the number {v}. Separately, {b} is mentioned.", True, False),
    ("{a} is mentioned early. Its value is {v}. {b} is {d} below it.", False, False),
    ("{a} stands at {v}0 {u}. {b} differs from {a} by {d}.", False, True),
    ("{a} is at 1{v}. Nothing about {b}.", False, False),
    ("The text says {b} trails {a} by {d} {u}. I do not know the {q} of {a}.", False, True),
    ("{A} is {v}! {B} is {d} {u} {down} than {A}?", True, True),
    ("Considering {a}: {v}.\n{b} relative to {a}: {d}.", True, True),
    ("{a} is {v}.5 on some scale. {b} and {a} differ by {d}.5.", False, False),
    ("No relevant facts were found in the text.", False, False),
    ("", False, False),
    ("{a}, {v}, {b}, {d}, all in one sentence without a break", True, True),
    ("{a}s are common. The value {v} appears. {b}x is {d} away from {a}.", False, False),
]


def main():
    rng = random.Random(7)
    out = []
    for i in range(50):
        a, b, q, u, down, _up = PAIRS[i % len(PAIRS)]
        pattern, first, second = PATTERNS[i % len(PATTERNS)]
        v = rng.randint(30, 99)
        d = rng.randint(2, 9) if i % 3 else rng.randint(11, 29)
        cot = pattern.format(a=a, b=b, A=a.upper(), B=b.lower(), q=q, u=u, v=v, d=d, down=down, ans=v - d)
        out.append({
            "id": f"cot-{i:02}",
            "facts": [
                {"entities": [a], "number": v, "hop": "first"},
                {"entities": [b, a], "number": d, "hop": "second"},
            ],
            "cot": cot,
            "expected": [first, second],
        })
    with open("recall_cots.jsonl", "w") as f:
        for rec in out:
            f.write(json.dumps(rec) + "\n")


if __name__ == "__main__":
    main()
