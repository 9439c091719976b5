"""Templated product-title corpus with multi-token brand spans.

Brands are drawn from a fixed lexicon and placed at the start, middle or
end of a title among filler tokens (adjectives, product nouns, sizes,
part numbers). A share of titles carries no brand at all.
"""

from __future__ import annotations

from .corpus import LabeledSequence, Span, encode_bio
from .numeric import SeededRng

# Brands used by the fixture titles; always part of the lexicon.
FIXTURE_BRANDS = ("Woodland Imports", "Home Essentials", "Plum Island Silver")

_ONSETS = ("B", "C", "D", "F", "G", "H", "K", "L", "M", "N", "P", "R", "S", "T", "V", "Z",
           "Br", "Cr", "Gl", "Pr", "St", "Tr", "Qu", "Sh")
_VOWELS = ("a", "e", "i", "o", "u", "ay", "ee", "oo")
_CODAS = ("", "n", "r", "x", "l", "m", "s", "rk", "nd", "lt")
_SUFFIXES = ("Imports", "Labs", "Goods", "Designs", "Works", "Outfitters", "Trading", "Brands",
             "Studio", "Supply", "Collective", "Industries")

ADJECTIVES = (
    "Decorative", "White", "Black", "Stainless", "Sterling", "Classic", "Deluxe", "Portable",
    "Wireless", "Organic", "Large", "Small", "Vintage", "Modern", "Rustic", "Heavy-Duty",
    "Compact", "Premium", "Soft", "Round", "Square", "Adjustable", "Waterproof", "Cordless",
    "Ceramic", "Wooden", "Glass", "Cotton", "Leather", "Silver", "Gold", "Blue", "Red", "Green",
    "Self", "Cooling", "Kids", "Mens", "Womens", "Outdoor",
)
NOUNS = (
    "Bottle", "Sugar", "Creamer", "Fairy", "Piece", "Ear", "Cuff", "Dog", "Pad", "Lamp",
    "Chair", "Table", "Mug", "Kettle", "Blender", "Printer", "Headphones", "Speaker", "Backpack",
    "Jacket", "Sneakers", "Watch", "Bracelet", "Necklace", "Pillow", "Blanket", "Towel",
    "Skillet", "Knife", "Cutting", "Board", "Vase", "Candle", "Frame", "Mirror", "Clock",
    "Charger", "Cable", "Mouse", "Keyboard", "Monitor", "Drill", "Hammer", "Wrench", "Tent",
    "Cooler", "Bike", "Helmet", "Stroller", "Toy", "Puzzle", "Shampoo", "Lotion", "Brush",
    "Rug", "Curtain", "Shelf", "Basket", "Planter", "Jar",
)
UNITS = ("oz", "ml", "in", "ft", "lb", "Pack", "Count", "pc", "W", "GB")
CONNECTORS = ("by", "from")
QUANTIFIERS = ("Set", "Pack", "Lot", "Bundle")


def _pseudo_word(rng: SeededRng) -> str:
    syllables = int(rng.integers(2, 4))
    word = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syllables - 1))
    word += rng.choice(_ONSETS).lower() + rng.choice(_VOWELS) + rng.choice(_CODAS)
    return word.capitalize()


def brand_lexicon(n: int = 200, seed: int = 0) -> list[tuple[str, ...]]:
    """``n`` distinct brands of 2-3 tokens; the fixture brands come first."""
    rng = SeededRng(seed, 7)
    brands = [tuple(b.split()) for b in FIXTURE_BRANDS][:n]
    seen = {" ".join(b) for b in brands}
    filler = set(ADJECTIVES) | set(NOUNS)
    while len(brands) < n:
        shape = int(rng.integers(0, 3))
        if shape == 0:
            toks = (_pseudo_word(rng), rng.choice(_SUFFIXES))
        elif shape == 1:
            toks = (_pseudo_word(rng), _pseudo_word(rng))
        else:
            toks = (_pseudo_word(rng), _pseudo_word(rng), rng.choice(_SUFFIXES))
        if any(t in filler for t in toks):
            continue
        name = " ".join(toks)
        if name not in seen:
            seen.add(name)
            brands.append(toks)
    return brands


def _part_number(rng: SeededRng) -> str:
    alnum = "ABCDEFGHJKLMNPRSTUVWXYZ0123456789"
    core = "".join(rng.choice(alnum) for _ in range(int(rng.integers(4, 8))))
    if rng.random() < 0.3:
        core += "#" + "".join(rng.choice(alnum) for _ in range(3))
    return core


def _spec(rng: SeededRng) -> str:
    r = rng.random()
    if r < 0.5:
        return f"{int(rng.integers(1, 64))}{rng.choice(UNITS)}"
    if r < 0.8:
        return _part_number(rng)
    return f"{int(rng.integers(2, 13))}-{rng.choice(('Pack', 'Piece', 'Count'))}"


def _filler(rng: SeededRng, k: int) -> list[str]:
    out = []
    for _ in range(k):
        r = rng.random()
        if r < 0.4:
            out.append(rng.choice(ADJECTIVES))
        elif r < 0.85:
            out.append(rng.choice(NOUNS))
        else:
            out.append(_spec(rng))
    return out


def generate_title(rng: SeededRng, brands, unbranded_rate: float = 0.1) -> LabeledSequence:
    """One title; the brand span is tagged B I*, everything else O."""
    if rng.random() < unbranded_rate:
        toks = [rng.choice(ADJECTIVES)] + _filler(rng, int(rng.integers(1, 6))) + [rng.choice(NOUNS)]
        return LabeledSequence(tuple(toks), encode_bio(toks))
    brand = list(brands[int(rng.integers(0, len(brands)))])
    tail = [rng.choice(ADJECTIVES)] + _filler(rng, int(rng.integers(0, 4))) + [rng.choice(NOUNS)]
    r = rng.random()
    if r < 0.6:
        head = []
    elif r < 0.8:
        head = _filler(rng, int(rng.integers(1, 3)))
        if rng.random() < 0.5:
            head = [rng.choice(QUANTIFIERS), "of", str(int(rng.integers(2, 7)))] + head
    else:
        # "<product> by <Brand>"
        head = tail + [rng.choice(CONNECTORS)]
        tail = [] if rng.random() < 0.6 else [_spec(rng)]
    toks = head + brand + tail
    span = Span(len(head), len(head) + len(brand))
    return LabeledSequence(tuple(toks), encode_bio(toks, span))


def generate_corpus(n: int = 2000, seed: int = 0, n_brands: int = 200,
                    unbranded_rate: float = 0.1) -> list[LabeledSequence]:
    brands = brand_lexicon(n_brands, seed)
    rng = SeededRng(seed, 8)
    return [generate_title(rng, brands, unbranded_rate) for _ in range(n)]
