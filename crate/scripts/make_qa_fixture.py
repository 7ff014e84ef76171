"""Writes small multi-document QA sets in the JSON-lines layout.

qa50.jsonl asks for each country's capital; currency50.jsonl asks for its
currency (answers repeat across countries, which probe training needs). The
gold context describes the country in question, distractors describe other
countries. Deterministic output.

Usage: python scripts/make_qa_fixture.py crates/logit-lens/tests/fixtures
"""
import json
import random
import sys
from pathlib import Path

FACTS = [
    ("France", "Paris", "Western Europe", "the euro"),
    ("Germany", "Berlin", "Central Europe", "the euro"),
    ("Italy", "Rome", "Southern Europe", "the euro"),
    ("Spain", "Madrid", "the Iberian Peninsula", "the euro"),
    ("Portugal", "Lisbon", "the Iberian Peninsula", "the euro"),
    ("Japan", "Tokyo", "East Asia", "the yen"),
    ("China", "Beijing", "East Asia", "the renminbi"),
    ("India", "New Delhi", "South Asia", "the rupee"),
    ("Russia", "Moscow", "Eastern Europe and North Asia", "the ruble"),
    ("Egypt", "Cairo", "North Africa", "the Egyptian pound"),
    ("Kenya", "Nairobi", "East Africa", "the Kenyan shilling"),
    ("Canada", "Ottawa", "North America", "the Canadian dollar"),
    ("Mexico", "Mexico City", "North America", "the peso"),
    ("Brazil", "Brasília", "South America", "the real"),
    ("Argentina", "Buenos Aires", "South America", "the peso"),
    ("Peru", "Lima", "South America", "the sol"),
    ("Chile", "Santiago", "South America", "the peso"),
    ("Australia", "Canberra", "Oceania", "the Australian dollar"),
    ("Norway", "Oslo", "Northern Europe", "the krone"),
    ("Sweden", "Stockholm", "Northern Europe", "the krona"),
    ("Finland", "Helsinki", "Northern Europe", "the euro"),
    ("Denmark", "Copenhagen", "Northern Europe", "the krone"),
    ("Poland", "Warsaw", "Central Europe", "the złoty"),
    ("Austria", "Vienna", "Central Europe", "the euro"),
    ("Greece", "Athens", "Southern Europe", "the euro"),
    ("Turkey", "Ankara", "Anatolia", "the lira"),
    ("Iran", "Tehran", "Western Asia", "the rial"),
    ("Iraq", "Baghdad", "Western Asia", "the dinar"),
    ("Thailand", "Bangkok", "Southeast Asia", "the baht"),
    ("Vietnam", "Hanoi", "Southeast Asia", "the dong"),
    ("Indonesia", "Jakarta", "Southeast Asia", "the rupiah"),
    ("Philippines", "Manila", "Southeast Asia", "the peso"),
    ("South Korea", "Seoul", "East Asia", "the won"),
    ("Ireland", "Dublin", "Western Europe", "the euro"),
    ("Belgium", "Brussels", "Western Europe", "the euro"),
    ("Netherlands", "Amsterdam", "Western Europe", "the euro"),
    ("Switzerland", "Bern", "Central Europe", "the Swiss franc"),
    ("Hungary", "Budapest", "Central Europe", "the forint"),
    ("Czech Republic", "Prague", "Central Europe", "the koruna"),
    ("Ukraine", "Kyiv", "Eastern Europe", "the hryvnia"),
    ("Morocco", "Rabat", "North Africa", "the dirham"),
    ("Nigeria", "Abuja", "West Africa", "the naira"),
    ("Ghana", "Accra", "West Africa", "the cedi"),
    ("Ethiopia", "Addis Ababa", "East Africa", "the birr"),
    ("Cuba", "Havana", "the Caribbean", "the peso"),
    ("Colombia", "Bogotá", "South America", "the peso"),
    ("Venezuela", "Caracas", "South America", "the bolívar"),
    ("New Zealand", "Wellington", "Oceania", "the New Zealand dollar"),
    ("Pakistan", "Islamabad", "South Asia", "the rupee"),
    ("Saudi Arabia", "Riyadh", "Western Asia", "the riyal"),
]

N_DISTRACTORS = 9


def doc(country, capital, region, currency):
    return {
        "title": country,
        "text": f"{country} is a country in {region}. Its capital and seat of government is "
        f"{capital}, and its currency is {currency}.",
    }


def build(question, answer, seed):
    rng = random.Random(seed)
    rows = []
    for i, fact in enumerate(FACTS):
        others = [f for j, f in enumerate(FACTS) if j != i]
        distractors = [dict(doc(*f), isgold=False) for f in rng.sample(others, N_DISTRACTORS)]
        ctxs = [dict(doc(*fact), isgold=True)] + distractors
        rows.append({"question": question(fact), "answers": [answer(fact)], "ctxs": ctxs})
    assert len(rows) == 50
    return rows


def strip_article(currency):
    return currency[4:] if currency.startswith("the ") else currency


def main():
    out = Path(sys.argv[1])
    sets = {
        "qa50.jsonl": build(lambda f: f"what is the capital of {f[0]}?", lambda f: f[1], 20241016),
        "currency50.jsonl": build(
            lambda f: f"what is the currency of {f[0]}?", lambda f: strip_article(f[3]), 20241017
        ),
    }
    for name, rows in sets.items():
        with open(out / name, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
