#!/usr/bin/env python3
"""Generate the bundled synthetic corpora.

Produces a UD-style English treebank sample (CoNLL-U, UPOS column filled)
and a binary movie-review sentiment dataset (TSV, header ``text\tlabel``)
from one small probabilistic grammar. Everything is derived from a fixed
seed, so re-running the script reproduces the committed files exactly.

Usage: python3 scripts/make_corpora.py [--out data]
"""

import argparse
import os
import random

# ---------------------------------------------------------------------------
# Lexicon
# ---------------------------------------------------------------------------

DETS = ["the", "the", "the", "a", "a", "this", "that", "every", "some", "another", "no", "each"]
DETS_PLURAL = ["the", "these", "those", "some", "many", "all"]
POSS = ["its", "his", "her", "their", "our"]

NOUNS = [
    "film", "movie", "story", "script", "cast", "performance", "plot", "tale", "comedy",
    "drama", "documentary", "thriller", "scene", "ending", "actor", "actress", "dialogue",
    "soundtrack", "camera", "character", "audience", "picture", "sequel", "romance",
    "premise", "climax", "screenplay", "narrative", "tone", "pace", "humor", "effort",
    "experience", "director", "filmmaker", "adaptation", "debut", "mystery", "journey",
    "production", "score", "villain", "hero", "setting", "idea", "message", "portrait",
    "satire", "spectacle", "cinema", "essence", "source", "poem", "workplace", "sitcom",
    "creature", "installation", "museum", "slice", "talent", "man", "woman", "family",
]
NOUNS_PLURAL = [
    "characters", "viewers", "actors", "scenes", "jokes", "moments", "performances",
    "friends", "stories", "chills", "effects", "visuals", "twists", "lines", "songs",
    "minutes", "critics", "fans", "kids", "images",
]

ADJ_POS = [
    "brilliant", "moving", "funny", "charming", "delightful", "gripping", "touching",
    "hilarious", "successful", "clever", "smart", "warm", "beautiful", "terrific",
    "solid", "nice", "fresh", "engaging", "powerful", "witty", "tender", "stunning",
    "wonderful", "compelling", "thoughtful", "exquisite", "inventive", "entertaining",
    "absorbing", "lovely", "sharp", "rich", "memorable", "fun",
]
ADJ_NEG = [
    "dull", "boring", "clumsy", "tedious", "lifeless", "bland", "messy", "predictable",
    "flat", "pointless", "tiresome", "awful", "weak", "stale", "lazy", "forgettable",
    "shallow", "confusing", "silly", "sloppy", "painful", "hollow", "listless",
    "mediocre", "dreary", "labored", "tired", "empty", "dumb", "unfunny", "sorrowful",
]
ADJ_NEUTRAL = [
    "long", "short", "new", "old", "familiar", "french", "asian", "big", "small", "final",
    "first", "whole", "modern", "quiet", "young", "dark", "simple", "british", "american",
    "latest", "original", "recent", "political", "romantic", "historical", "musical",
]

# Adverbs by syntactic slot.
ADV_INTENS = [
    "very", "really", "truly", "quite", "remarkably", "incredibly", "extremely", "rather",
    "somewhat", "too", "genuinely", "utterly", "surprisingly", "deeply", "wildly",
    "consistently", "refreshingly", "thoroughly",
]
ADV_SENT = [
    "simply", "frankly", "honestly", "ultimately", "altogether", "clearly", "certainly",
    "overall", "admittedly", "basically", "perhaps", "obviously", "essentially",
]
ADV_SENT_POS = ["thankfully", "fortunately", "happily", "luckily"]
ADV_SENT_NEG = ["sadly", "unfortunately", "regrettably", "alas"]
ADV_MANNER_POS = [
    "brilliantly", "beautifully", "carefully", "skillfully", "wonderfully", "expertly",
    "gracefully", "cleverly", "lovingly", "deftly", "masterfully", "confidently",
]
ADV_MANNER_NEG = [
    "clumsily", "poorly", "badly", "awkwardly", "lazily", "lethargically", "sloppily",
    "abruptly", "carelessly", "clumsily", "haphazardly", "blandly",
]
ADV_FREQ = ["never", "always", "often", "rarely", "still", "even", "just", "also", "almost", "sometimes"]

AUX_COP = ["is", "is", "is", "was", "remains", "feels", "seems"]
AUX_COP_PL = ["are", "were"]
AUX_PERF = ["has", "had"]

VERB_POS = [
    ("crafted", "crafted"), ("updated", "updated"), ("captured", "captured"),
    ("delivered", "delivered"), ("handled", "handled"), ("directed", "directed"),
    ("written", "wrote"), ("staged", "staged"), ("built", "built"), ("shot", "shot"),
]
VERB_TRANS_POS = ["offers", "delivers", "captures", "rewards", "celebrates", "finds", "earns", "balances"]
VERB_TRANS_NEG = ["wastes", "lacks", "squanders", "loses", "botches", "ruins", "misses", "fumbles"]
VERB_EXP_POS = ["love", "enjoy", "admire", "recommend", "remember", "treasure"]
VERB_EXP_NEG = ["hate", "regret", "forget", "endure", "resent", "dread"]
VERB_INF = ["watch", "care", "sit", "laugh", "believe", "follow", "stay", "look"]

PRON_SUBJ = ["it", "this", "he", "she", "they"]
PRON_EXP = ["i", "you", "we"]
PROPN_NAMES = [
    "parker", "smith", "anderson", "spielberg", "hollywood", "disney", "paris", "london",
    "john", "mary", "scorsese", "kubrick", "tarantino", "woody", "allen", "hitchcock",
]
ADPS = ["of", "in", "on", "with", "about", "for", "from", "by", "among", "without", "into", "through"]
CONJ_CONTRAST = ["but", "yet"]
SCONJS = ["although", "while", "because", "though", "as"]
NUMS = ["two", "three", "ten", "90", "100", "five"]

FLAT = [
    # (words, tags, polarity) short fixed reactions, mostly adverb-free
    (["what", "a", "mess"], ["PRON", "DET", "NOUN"], 0),
    (["what", "a", "ride"], ["PRON", "DET", "NOUN"], 1),
    (["oh", ",", "the", "humanity"], ["INTJ", "PUNCT", "DET", "NOUN"], 0),
    (["wow"], ["INTJ"], 1),
]


class Gen:
    def __init__(self, rng):
        self.r = rng

    def pick(self, xs):
        return self.r.choice(xs)

    def p(self, prob):
        return self.r.random() < prob

    # -- phrases ------------------------------------------------------------

    def adjp(self, pol, allow_adv=True):
        out = []
        if allow_adv and self.p(0.45):
            out.append((self.pick(ADV_INTENS), "ADV"))
        out.append((self.pick(ADJ_POS if pol else ADJ_NEG), "ADJ"))
        return out

    def np(self, pol=None, plural=False, allow_adv=True):
        r = self.r.random()
        if r < 0.08 and not plural:
            names = [(self.pick(PROPN_NAMES), "PROPN")]
            if self.p(0.3):
                names.append((self.pick(PROPN_NAMES), "PROPN"))
            return names
        out = []
        if self.p(0.2):
            out.append((self.pick(POSS), "PRON"))
        elif plural:
            if self.p(0.7):
                out.append((self.pick(DETS_PLURAL), "DET"))
            elif self.p(0.3):
                out.append((self.pick(NUMS), "NUM"))
        else:
            out.append((self.pick(DETS), "DET"))
            if out[-1][0] == "a" and self.p(0.25):
                out[-1] = ("an", "DET")
        if pol is not None and self.p(0.45):
            out += self.adjp(pol, allow_adv)
        elif self.p(0.25):
            out.append((self.pick(ADJ_NEUTRAL), "ADJ"))
        out.append((self.pick(NOUNS_PLURAL if plural else NOUNS), "NOUN"))
        return out

    def pp(self):
        return [(self.pick(ADPS), "ADP")] + self.np(None, plural=self.p(0.3))

    def subject(self):
        r = self.r.random()
        if r < 0.3:
            w = self.pick(PRON_SUBJ)
            return [(w, "PRON")], w == "they"
        plural = self.p(0.2)
        return self.np(None, plural=plural), plural

    # -- clauses --------------------------------------------------------------

    def copular(self, pol):
        subj, plural = self.subject()
        out = list(subj)
        out.append((self.pick(AUX_COP_PL if plural else AUX_COP), "AUX"))
        negate = self.p(0.12)
        if self.p(0.12):
            out.append((self.pick(ADV_SENT), "ADV"))
        if negate:
            out.append(("not", "PART"))
        if self.p(0.3) and not plural:
            out.append((self.pick(["a", "an", "the"]), "DET"))
            out += self.adjp(pol ^ negate)
            out.append((self.pick(NOUNS), "NOUN"))
        else:
            out += self.adjp(pol ^ negate)
        if self.p(0.25):
            out += self.pp()
        return out

    def transitive(self, pol):
        subj, _ = self.subject()
        out = list(subj)
        r = self.r.random()
        if r < 0.5:
            out.append((self.pick(AUX_PERF), "AUX"))
            manner = None
            if self.p(0.55):
                manner = (self.pick(ADV_MANNER_POS if pol else ADV_MANNER_NEG), "ADV")
            pre = manner is not None and self.p(0.75)
            if pre:
                out.append(manner)
            out.append((self.pick(VERB_POS)[0], "VERB"))
            out += self.np(pol if self.p(0.5) else None)
            if manner is not None and not pre:
                out.append(manner)
        else:
            if self.p(0.15):
                out.append((self.pick(ADV_FREQ), "ADV"))
            out.append((self.pick(VERB_TRANS_POS if pol else VERB_TRANS_NEG), "VERB"))
            out += self.np(pol if self.p(0.6) else None, plural=self.p(0.3))
        if self.p(0.25):
            out += self.pp()
        return out

    def experiencer(self, pol):
        out = [(self.pick(PRON_EXP), "PRON")]
        negate = False
        if self.p(0.5):
            out.append((self.pick(["will", "would", "can", "could", "might"]), "AUX"))
            if self.p(0.35):
                out.append((self.pick(ADV_FREQ), "ADV"))
            elif self.p(0.15):
                out.append(("not", "PART"))
                negate = True
            out.append((self.pick(VERB_EXP_POS if pol ^ negate else VERB_EXP_NEG), "VERB"))
        else:
            out.append((self.pick(VERB_EXP_POS if pol else VERB_EXP_NEG), "VERB"))
        out += self.np(None)
        if self.p(0.2):
            out += [("to", "PART"), (self.pick(VERB_INF), "VERB")]
        return out

    def extraposed(self, pol):
        # it is hard to care about the characters
        out = [("it", "PRON"), (self.pick(["is", "was"]), "AUX")]
        if self.p(0.4):
            out.append((self.pick(ADV_INTENS), "ADV"))
        out.append((self.pick(["easy", "fun", "rewarding", "nice"] if pol else ["hard", "difficult", "impossible", "tough"]), "ADJ"))
        out += [("to", "PART"), (self.pick(VERB_INF), "VERB")]
        if self.p(0.6):
            out += [(self.pick(["about", "with", "through"]), "ADP")] + self.np(None, plural=self.p(0.5))
        return out

    def clause(self, pol):
        r = self.r.random()
        if r < 0.4:
            return self.copular(pol)
        if r < 0.72:
            return self.transitive(pol)
        if r < 0.88:
            return self.experiencer(pol)
        return self.extraposed(pol)

    def sentence(self):
        """Returns (tagged tokens, label)."""
        label = 1 if self.p(0.5) else 0
        if self.p(0.02):
            words, tags, pol = self.pick(FLAT)
            toks = list(zip(words, tags)) + [(self.pick([".", "!"]), "PUNCT")]
            return toks, pol
        toks = []
        if self.p(0.22):
            pool = ADV_SENT + (ADV_SENT_POS if label else ADV_SENT_NEG)
            toks.append((self.pick(pool), "ADV"))
            if self.p(0.9):
                toks.append((",", "PUNCT"))
        r = self.r.random()
        if r < 0.22:
            # contrast: the second clause carries the label
            toks += self.clause(1 - label)
            toks += [(",", "PUNCT"), (self.pick(CONJ_CONTRAST), "CCONJ")]
            toks += self.clause(label)
        elif r < 0.35:
            toks += self.clause(label)
            toks += [(",", "PUNCT"), ("and", "CCONJ")]
            toks += self.clause(label)
        elif r < 0.43:
            toks += [(self.pick(SCONJS), "SCONJ")]
            toks += self.clause(label)
            toks += [(",", "PUNCT")]
            toks += self.clause(label)
        else:
            toks += self.clause(label)
        end = "!" if self.p(0.12) else ("?" if self.p(0.02) else ".")
        toks.append((end, "PUNCT"))
        return toks, label


def render(tokens):
    """Detokenize into natural-looking text (capitalized, attached punctuation)."""
    out = ""
    for i, (w, _) in enumerate(tokens):
        if i == 0:
            out = w[0].upper() + w[1:]
        elif w in {".", ",", "!", "?", ";", ":"}:
            out += w
        else:
            out += " " + w
    return out


def write_conllu(path, sents):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for k, toks in enumerate(sents):
            f.write(f"# sent_id = synth-{k + 1}\n")
            f.write(f"# text = {render(toks)}\n")
            for i, (w, t) in enumerate(toks):
                form = w[0].upper() + w[1:] if i == 0 else w
                f.write(f"{i + 1}\t{form}\t_\t{t}\t_\t_\t_\t_\t_\t_\n")
            f.write("\n")


def write_tsv(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("text\tlabel\n")
        for toks, label in rows:
            f.write(f"{render(toks)}\t{label}\n")


def flip_noise(rng, rows, rate):
    return [(t, (1 - y) if rng.random() < rate else y) for t, y in rows]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    args = ap.parse_args()

    tb_dir = os.path.join(args.out, "treebank")
    ds_dir = os.path.join(args.out, "sst2_synth")
    os.makedirs(tb_dir, exist_ok=True)
    os.makedirs(ds_dir, exist_ok=True)

    g = Gen(random.Random(20230917))
    write_conllu(os.path.join(tb_dir, "en_synth-ud-train.conllu"), [g.sentence()[0] for _ in range(3000)])
    g = Gen(random.Random(777))
    write_conllu(os.path.join(tb_dir, "en_synth-ud-test.conllu"), [g.sentence()[0] for _ in range(600)])

    g = Gen(random.Random(42))
    noise = random.Random(4242)
    train = flip_noise(noise, [g.sentence() for _ in range(4800)], 0.05)
    dev = flip_noise(noise, [g.sentence() for _ in range(600)], 0.05)
    test = flip_noise(noise, [g.sentence() for _ in range(1000)], 0.05)
    write_tsv(os.path.join(ds_dir, "train.tsv"), train)
    write_tsv(os.path.join(ds_dir, "dev.tsv"), dev)
    write_tsv(os.path.join(ds_dir, "test.tsv"), test)

    g = Gen(random.Random(9))
    mini = [g.sentence() for _ in range(400)]
    os.makedirs(os.path.join(args.out, "mini"), exist_ok=True)
    write_tsv(os.path.join(args.out, "mini", "train.tsv"), mini[:300])
    write_tsv(os.path.join(args.out, "mini", "dev.tsv"), mini[300:340])
    write_tsv(os.path.join(args.out, "mini", "test.tsv"), mini[340:])


if __name__ == "__main__":
    main()
