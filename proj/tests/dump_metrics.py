"""Recomputes evaluation metrics from a prediction dump.

usage: dump_metrics.py DUMP_CSV DATA_CSV SCHEMA

Prints `task,metric,value` lines for the class task (accuracy, macro_f1) and
the attribute task (accuracy, macro_f1, afa).
"""

import csv
import sys


def f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def main(dump_path, data_path, schema_path):
    schema = {}
    with open(schema_path) as f:
        for line in f:
            if ":" in line:
                key, value = line.split(":", 1)
                schema[key.strip()] = [v.strip() for v in value.split(",")]
    classes = schema["classes"]
    attributes = schema["attributes"]

    with open(dump_path) as f:
        dump = list(csv.DictReader(f))
    with open(data_path) as f:
        data = list(csv.DictReader(f))
    assert len(dump) == len(data)

    k = len(classes)
    tp, fp, fn = [0] * k, [0] * k, [0] * k
    correct = labelled = 0
    for pred_row, true_row in zip(dump, data):
        if not true_row["cls"]:
            continue
        probs = [float(pred_row["p_" + c]) for c in classes]
        pred = probs.index(max(probs))
        truth = classes.index(true_row["cls"])
        labelled += 1
        if pred == truth:
            correct += 1
            tp[truth] += 1
        else:
            fp[pred] += 1
            fn[truth] += 1
    if labelled:
        print("cls,accuracy,%.17g" % (correct / labelled))
        print("cls,macro_f1,%.17g" % (sum(f1(tp[c], fp[c], fn[c]) for c in range(k)) / k))

    accs, f1s = [], []
    for a in attributes:
        n = ok = atp = afp = afn = 0
        for pred_row, true_row in zip(dump, data):
            cell = true_row["att_" + a]
            if cell == "":
                continue
            y = cell == "1"
            p = float(pred_row["q_" + a]) >= 0.5
            n += 1
            ok += y == p
            atp += y and p
            afp += (not y) and p
            afn += y and not p
        if n:
            accs.append(ok / n)
            f1s.append(f1(atp, afp, afn))
    if accs:
        acc = sum(accs) / len(accs)
        mf1 = sum(f1s) / len(f1s)
        print("att,accuracy,%.17g" % acc)
        print("att,macro_f1,%.17g" % mf1)
        print("att,afa,%.17g" % (0.5 * (mf1 + acc)))


if __name__ == "__main__":
    main(*sys.argv[1:4])
