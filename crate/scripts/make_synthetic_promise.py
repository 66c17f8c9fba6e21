"""Generate a synthetic requirements corpus with the PROMISE NFR class counts.

The public PROMISE NFR export cannot be redistributed here, so this writes a
stand-in with the same shape: 625 sentences, `text,label` columns, 12 label
codes with the original per-class counts. Sentences are assembled from
class-specific phrase banks so retrieval has something to find.

    python scripts/make_synthetic_promise.py > data/promise_synthetic.csv
"""

import csv
import random
import sys

COUNTS = {
    "F": 255, "A": 21, "FT": 10, "L": 13, "LF": 38, "MN": 17,
    "O": 62, "PE": 54, "PO": 1, "SC": 21, "SE": 66, "US": 67,
}

ACTORS = ["the user", "a clinician", "the administrator", "a customer", "the dispatcher",
          "a student", "the manager", "a realtor", "the operator", "a game player"]
OBJECTS = ["order", "appointment", "report", "invoice", "lease", "course schedule",
           "incident ticket", "patient record", "property listing", "tournament bracket",
           "shipment", "timesheet", "budget line", "survey response", "meeting room"]

BANKS = {
    "F": [
        "The system shall allow {a} to create a new {o}.",
        "The system shall let {a} edit an existing {o}.",
        "The system shall display a list of every {o} assigned to {a}.",
        "The product shall email {a} when a {o} is approved.",
        "The system shall allow {a} to delete a {o} that has not been submitted.",
        "The system shall record the date and time each {o} is modified.",
        "The product shall let {a} search for a {o} by name or number.",
        "The system shall generate a monthly summary of each {o} for {a}.",
        "The system shall allow {a} to attach a document to a {o}.",
        "The product shall let {a} export a {o} to a spreadsheet.",
    ],
    "A": [
        "The system shall be available {p} of the time during business hours.",
        "The product shall be operational 24 hours a day, 7 days a week, excluding {p} planned downtime.",
        "Scheduled maintenance of the system shall not exceed {p} of monthly uptime.",
        "The service shall recover from an outage and be available again within {n} minutes.",
        "The {o} service shall be reachable by {a} at least {p} of the time.",
    ],
    "FT": [
        "The system shall continue to process each {o} if one database server fails.",
        "The product shall keep working without data loss after a power failure.",
        "If the network connection drops the system shall queue every {o} and resend it.",
    ],
    "L": [
        "The system shall comply with the data protection regulations for each {o}.",
        "The product shall retain every {o} for {n} years as required by law.",
        "The system shall meet the accessibility legislation in force for public agencies.",
        "The product shall display the license terms before {a} accepts them.",
    ],
    "LF": [
        "The interface shall use the corporate color scheme and logo.",
        "The screens shall have a clean, professional look for {a}.",
        "Every {o} page shall follow the same layout and font style.",
        "The product shall appear modern and attractive to {a}.",
        "Buttons and icons shall be consistent in size and color across the application.",
        "The {o} screen shall use large, readable text and a simple color palette.",
        "The menus shown to {a} shall have a uniform visual style.",
    ],
    "MN": [
        "A developer shall be able to add a new {o} type within {n} hours of work.",
        "The source code shall follow the documented coding standard to ease maintenance.",
        "Updates to the tax rules shall be installed without changing the application code.",
        "The product shall be modular so that a component can be replaced independently.",
    ],
    "O": [
        "The system shall run on the existing hospital workstations and browsers.",
        "The product shall interface with the legacy billing system for each {o}.",
        "The system shall operate within the current network infrastructure of the office.",
        "The product shall be installed by the operator without vendor assistance.",
        "The system shall import each {o} nightly from the central database.",
        "The system shall run on the terminals {a} already uses to manage a {o}.",
    ],
    "PE": [
        "The system shall return search results for a {o} within {n} seconds.",
        "The product shall support {m} concurrent users without degradation in response time.",
        "Each {o} page shall load in under {n} seconds on a standard connection.",
        "The system shall process {m} {o} transactions per minute.",
        "Response time for saving a {o} shall not exceed {n} seconds.",
    ],
    "PO": [
        "The product shall be portable to any operating system that supports the Java runtime.",
    ],
    "SC": [
        "The system shall scale to handle {m} {o} records without redesign.",
        "The product shall support growth to {m} users over the next {n} years.",
        "Additional servers shall be added to increase capacity as {o} volume grows.",
    ],
    "SE": [
        "Only authorized users shall be able to view a {o}.",
        "The system shall encrypt every {o} stored in the database.",
        "The product shall require {a} to log in with a password before accessing any {o}.",
        "The system shall lock an account after {n} failed login attempts.",
        "All access to a {o} shall be recorded in an audit log.",
        "Passwords shall be changed every {n} days and never stored in plain text.",
    ],
    "US": [
        "A first-time user shall be able to complete a {o} without training within {n} minutes.",
        "The product shall be easy to learn for {a} with basic computer skills.",
        "Help text shall be available on every screen used to manage a {o}.",
        "{a_cap} shall be able to find the {o} functions in no more than {n} clicks.",
        "Error messages shall explain to {a} how to correct the problem.",
        "{p} of first-time users shall rate the {o} workflow as easy to use.",
    ],
}


def fill(template, rng):
    actor = rng.choice(ACTORS)
    return template.format(
        a=actor,
        a_cap=actor[0].upper() + actor[1:],
        o=rng.choice(OBJECTS),
        n=rng.choice([2, 3, 5, 10, 15, 30]),
        m=rng.choice([100, 500, 1000, 5000, 10000]),
        p=rng.choice(["99%", "99.5%", "98%", "95%", "90%"]),
    )


def main():
    rng = random.Random(20240917)
    rows = []
    for code, count in COUNTS.items():
        distinct = sorted({fill(rng.choice(BANKS[code]), rng) for _ in range(4000)})
        if len(distinct) < count:
            sys.exit(f"{code}: phrase bank yields only {len(distinct)} sentences, need {count}")
        rows.extend((text, code) for text in rng.sample(distinct, count))
    rng.shuffle(rows)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["text", "label"])
    w.writerows(rows)


if __name__ == "__main__":
    main()
