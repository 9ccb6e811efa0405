"""From raw question to encoder input: anonymization and group merging.

Run:  python3 demos/02_text_pipeline.py
"""

from conjparse.text_pipeline import anonymize, degroup, merge_groups

entity_lexicon = {"inception": "inception", "goldfinger": "goldfinger"}
pos_lexicon = {"directed": "VERB", "produced": "VERB"}

question = "Who directed and produced Goldfinger and Inception ?"
anon = anonymize(question, entity_lexicon)
print("tokens:          ", list(anon.tokens))
print("entity slots:    ", anon.entity_slots)
print("mention positions:", anon.mention_positions)

merged = merge_groups(anon, pos_lexicon, n_vars=4)
print("\ngroups:")
for i, g in enumerate(merged.groups):
    print(f"  g{i}: {list(g.members)}  (tag {g.tag})")
print("layout: groups 0..%d, [SEP] at %d, x0..x3 at %s, NIL at %d"
      % (len(merged.groups) - 1, merged.sep_pos,
         [merged.var_pos(i) for i in range(4)], merged.nil_pos))
print("entity slot -> group:", merged.slot_to_group)

# The group-unaware model variant sees the flat token sequence again.
flat = degroup(merged)
print("\ndegrouped:", [g.members[0] for g in flat.groups])

# Same-entity mentions share one slot.
again = anonymize("Did Inception star Inception ?", entity_lexicon)
print("\nrepeated mention reuses slot:", list(again.tokens),
      again.mention_positions)
