"""Counting label sub-sequences that repeat across domains.

The same action chains recur in different environments; this is the
observation the whole method rests on, and this tool quantifies it for
any annotation CSV. Here a small two-domain corpus is crafted by hand.
"""

from seqdg.seqstats import count_all_categories, format_table

# two kitchens preparing a drink with the same steps, then diverging
rows = []


def video(video_id, domain, labels):
    for t, (verb, noun) in enumerate(labels):
        rows.append({"video_id": video_id, "domain_id": domain,
                     "temporal_index": t, "verb_class": verb,
                     "noun_class": noun, "narration": f"v{verb} n{noun}"})


OPEN, TAKE, POUR, CLOSE, WASH = range(5)
FRIDGE, MILK, CUP = range(3)

video("kitchen_a/morning", "kitchen_a", [
    (OPEN, FRIDGE), (TAKE, MILK), (POUR, MILK), (CLOSE, FRIDGE), (WASH, CUP)])
video("kitchen_b/breakfast", "kitchen_b", [
    (OPEN, FRIDGE), (TAKE, MILK), (POUR, MILK), (WASH, CUP)])
video("kitchen_b/evening", "kitchen_b", [
    (CLOSE, FRIDGE), (WASH, CUP), (OPEN, FRIDGE)])

tables = count_all_categories(rows, max_length=5)
print(format_table(tables))
print()
print("the (open fridge, take milk, pour milk) chain appears in both kitchens,")
print("so every prefix of it counts as a repeated cross-domain sequence:")
action = tables["action"]
for n in range(2, 6):
    print(f"  length <= {n}: {action.distinct[n]} distinct patterns, "
          f"{action.occurrences[n]} occurrences")
