"""A scripted conversation with the contact-management assistant.

Drives the dialog machine directly (no audio, no server): wake word,
add a contact digit by digit, then search and call it. Shows the state,
the active vocabulary size, and the side effects as they fire.
"""

from smallvoice import assistant as asst

store = asst.ContactStore()
session = asst.DialogSession()


def say(cls):
    vocab = len(asst.active_vocabulary(session))
    result = asst.transition(session, cls, store)
    print(f"user: {cls.display_text:<14} ({cls.language:<20} {vocab:3d} classes "
          f"active) -> state {int(result.state):2d}  VA: {result.prompt}")
    if result.side_effect:
        e = result.side_effect
        print(f"     *** side effect: {e.type}({e.name}"
              f"{', ' + e.phone if e.phone else ''}) ***")


print(f"[state {int(session.state)}] {session.last_prompt}\n")

say(asst.find_class("wake_word", "susu"))
say(asst.find_class("add", "susu"))
say(asst.name_class("Fatoumata"))
for digit in "698332529":
    say(asst.find_class(f"digit_{digit}", "susu"))
say(asst.find_class("yes", "susu"))

print(f"\ncontacts now: {[(c.name, c.phone) for c in store.list()]}\n")

say(asst.find_class("wake_word", "maninka"))
say(asst.find_class("search", "maninka"))
say(asst.name_class("Fatoumata"))
say(asst.find_class("call", "maninka"))
