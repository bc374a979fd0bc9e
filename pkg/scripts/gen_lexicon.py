#!/usr/bin/env python3
"""Regenerate src/crossview/data_files/lexicon.tsv.

The shipped lexicon is a deliberately small stand-in tagger for
household/workshop activity captions.  Each surface form maps to
exactly one (lemma, pos) entry; collisions are resolved by
registration priority: stopwords, then verbs, then nouns.  Words that
are more useful as nouns (water, oil, ...) are simply left off the
verb list.
"""

from pathlib import Path

STOPWORDS = """
the a an and or but of in on at to for with from by into onto over under up
down out off about as is am are was were be been being it its this that these
those he she they them his her their my your our me us you i we will would
can could should shall may might must not no yes there where when what which
who how why if because while after before during again more most some any all
few each every other another same such only very too also than then
""".split()

VERBS = """
toast cut chop slice mix stir pour add place put take remove open close wash
clean dry peel grate fry boil bake cook heat serve spread flip roll fold
press hold grab lift turn move wipe scrub rinse plant dig prune trim paint
sand drill screw hammer glue tape measure mark attach tighten loosen sharpen
knead whisk season sprinkle crack beat melt throw kick catch carry push pull
wrap squeeze shake drop pick walk run sit stand go do have get make use apply
insert connect check adjust start stop finish repeat grill slide scoop drain
crush blend pat rub
""".split()

NOUNS = """
bread toaster knife board onion tomato pepper garlic carrot potato egg butter
oil salt sugar flour dough milk cheese chicken meat fish rice pasta sauce
soup salad sandwich pizza cake cookie pan pot bowl plate spoon fork cup glass
oven stove microwave fridge sink counter table chair towel sponge soap brush
bucket cloth window door wall floor shelf box bag bottle jar lid paper
scissors wood nail wire pipe wrench screwdriver ladder seed soil flower
garden grass leaf branch tree bush hose ball rope string wheel tire car bike
engine battery light switch button screen phone computer keyboard camera
person hand finger arm head hair face dog cat bird water plank blender
mixer grater peeler tray rack cabinet drawer handle hinge bolt clamp vise
""".split()

IRREGULAR_PAST = {
    "make": ["made"], "take": ["took", "taken"], "go": ["went", "gone"],
    "do": ["did", "done"], "have": ["had"], "get": ["got", "gotten"],
    "run": ["ran"], "sit": ["sat"], "stand": ["stood"], "hold": ["held"],
    "throw": ["threw", "thrown"], "catch": ["caught"],
}

DOUBLE_FINAL = {
    "chop", "stir", "cut", "put", "dig", "drop", "flip", "grab", "wrap",
    "trim", "rub", "pat", "run", "sit", "get", "stop", "scrub",
}

F_TO_VES = {"knife", "leaf", "shelf", "loaf"}


def third_person(v):
    if v.endswith(("s", "x", "z", "ch", "sh", "o")):
        return v + "es"
    if len(v) > 1 and v.endswith("y") and v[-2] not in "aeiou":
        return v[:-1] + "ies"
    return v + "s"


def ing_form(v):
    if v in DOUBLE_FINAL:
        return v + v[-1] + "ing"
    if v.endswith("e") and not v.endswith(("ee", "ye")):
        return v[:-1] + "ing"
    return v + "ing"


def past_form(v):
    if v in IRREGULAR_PAST:
        return None  # explicit forms registered separately
    if v in DOUBLE_FINAL:
        return v + v[-1] + "ed"
    if v.endswith("e"):
        return v + "d"
    if len(v) > 1 and v.endswith("y") and v[-2] not in "aeiou":
        return v[:-1] + "ied"
    return v + "ed"


def plural(n):
    if n in F_TO_VES:
        return n[:-1] + "ves" if n.endswith("f") else n[:-2] + "ves"
    if n.endswith(("s", "x", "z", "ch", "sh")):
        return n + "es"
    if len(n) > 1 and n.endswith("y") and n[-2] not in "aeiou":
        return n[:-1] + "ies"
    return n + "s"


def main():
    entries = {}

    def register(surface, lemma, pos):
        if surface not in entries:
            entries[surface] = (lemma, pos)

    for word in STOPWORDS:
        register(word, word, "stop")
    for verb in VERBS:
        register(verb, verb, "verb")
        register(third_person(verb), verb, "verb")
        register(ing_form(verb), verb, "verb")
        past = past_form(verb)
        if past:
            register(past, verb, "verb")
        for form in IRREGULAR_PAST.get(verb, []):
            register(form, verb, "verb")
    for noun in NOUNS:
        register(noun, noun, "noun")
        register(plural(noun), noun, "noun")

    out = Path(__file__).resolve().parents[1] / "src/crossview/data_files/lexicon.tsv"
    lines = [
        "# surface\tlemma\tpos — generated by scripts/gen_lexicon.py",
        "# collision priority at generation time: stop > verb > noun",
    ]
    for surface in sorted(entries):
        lemma, pos = entries[surface]
        lines.append(f"{surface}\t{lemma}\t{pos}")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(entries)} entries to {out}")


if __name__ == "__main__":
    main()
