"""NER adapter for clozecheck's line-JSON protocol.

Reads {"text": ...} per line on stdin, writes
{"entities": [{"text", "label", "char_span": {"start", "end"}}]} per line.
Offsets are in characters.

    clozecheck zeroshot ... --ner-command "python3 scripts/spacy_ner.py en_core_web_sm"
"""

import json
import sys

import spacy


def main() -> None:
    nlp = spacy.load(sys.argv[1] if len(sys.argv) > 1 else "en_core_web_sm")
    for line in sys.stdin:
        doc = nlp(json.loads(line)["text"])
        ents = [
            {"text": e.text, "label": e.label_, "char_span": {"start": e.start_char, "end": e.end_char}}
            for e in doc.ents
        ]
        sys.stdout.write(json.dumps({"entities": ents}) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
