"""Deterministic planted-cohort corpus for end-to-end checks.

Ten initiatives, each with its own vocabulary (no word shared between
initiatives or with the distractor vocabulary). Every initiative gets 20
postings written mostly in its vocabulary; 100 distractor postings use
an unrelated vocabulary. A few exact duplicates and two malformed lines
exercise the ingest stage.
"""
from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Dict, List

SEED = 20230701
COHORT_SIZE = 20
DISTRACTORS = 100

COHORTS: Dict[str, Dict[str, List[str]]] = {
    "Cloud Computing": {
        "vocab": ["cloud", "computing", "elastic", "serverless", "kubernetes", "provisioning", "virtualisation",
                  "hyperscaler", "tenancy", "iaas", "autoscaling", "containers", "orchestration", "multicloud"],
        "titles": ["Cloud Engineer", "Cloud Platform Engineer", "Cloud Architect", "Cloud Operations Engineer",
                   "Cloud Security Engineer", "Cloud Solution Architect", "DevOps Engineer",
                   "Site Reliability Engineer", "Kubernetes Administrator", "Cloud Service Admin",
                   "Platform Engineer", "Infrastructure Engineer"],
    },
    "Generative AI": {
        "vocab": ["generative", "ai", "transformer", "diffusion", "llm", "prompting", "finetuning", "multimodal",
                  "pretrained", "tokens", "inference", "chatbot", "synthesis", "foundation"],
        "titles": ["Machine Learning Engineer", "Deep Learning Engineer", "AI Consultant", "Prompt Engineer",
                   "Applied Scientist", "Post-Doctoral Researcher", "NLP Engineer", "AI Product Manager",
                   "Conversational Designer", "ML Ops Engineer", "AI Solutions Architect", "Research Scientist"],
    },
    "Quantum Computing": {
        "vocab": ["quantum", "qubit", "superposition", "entanglement", "decoherence", "cryogenic", "annealing",
                  "photonic", "gates", "topological", "error", "correction", "algorithms", "simulation"],
        "titles": ["Quantum Engineer", "Quantum Physicist", "Quantum Software Developer", "Cryogenics Technician",
                   "Photonics Engineer", "Quantum Algorithm Researcher", "Quantum Hardware Engineer",
                   "Microwave Engineer", "Quantum Control Engineer", "Fabrication Scientist",
                   "Qubit Design Engineer", "Optical Engineer"],
    },
    "Blockchain": {
        "vocab": ["blockchain", "ledger", "consensus", "tokenomics", "cryptocurrency", "wallet", "solidity",
                  "decentralised", "mining", "hashing", "ethereum", "staking", "nft", "defi"],
        "titles": ["Blockchain Engineer", "Blockchain Technical Analyst", "Smart Contract Developer",
                   "Crypto Compliance Officer", "Solidity Developer", "Web3 Product Manager", "Token Economist",
                   "Wallet Engineer", "DeFi Analyst", "Protocol Engineer", "Crypto Trader", "Node Operator"],
    },
    "Cybersecurity": {
        "vocab": ["cybersecurity", "threat", "firewall", "intrusion", "malware", "siem", "vulnerability",
                  "penetration", "phishing", "ransomware", "soc", "forensics", "encryption", "zerotrust"],
        "titles": ["Cybersecurity Specialist", "IT Security Analyst", "Security Administrator",
                   "Penetration Tester", "SOC Analyst", "Cybersecurity Architect", "Threat Hunter",
                   "Incident Responder", "Forensics Investigator", "Vulnerability Manager",
                   "Information Security Officer", "Security Consultant"],
    },
    "Agile Ways of Working": {
        "vocab": ["agile", "scrum", "sprint", "kanban", "backlog", "retrospective", "standup", "iterative",
                  "squads", "velocity", "ceremonies", "increment", "safe", "coaching"],
        "titles": ["Agile Business Analyst", "Scrum Master", "Agile Coach", "Product Owner", "Delivery Manager",
                   "Release Train Engineer", "Iteration Manager", "Agile Project Manager", "Business Analyst",
                   "Ways of Working Consultant", "Portfolio Manager", "Transformation Manager"],
    },
    "Product Customisation": {
        "vocab": ["customisation", "personalisation", "bespoke", "configurator", "tailored", "made", "order",
                  "variants", "modular", "mass", "customer", "preferences", "fitting", "options"],
        "titles": ["Product Engineering Specialist", "Tailor", "Custom Research Director",
                   "Product Configuration Analyst", "Personalisation Manager", "Bespoke Designer",
                   "Variant Engineer", "Customer Experience Designer", "Fitting Specialist",
                   "Product Development Manager", "Modular Design Engineer", "Order Configuration Officer"],
    },
    "Transition to Renewable Energy": {
        "vocab": ["renewable", "solar", "wind", "photovoltaic", "turbine", "decarbonisation", "grid", "storage",
                  "battery", "hydrogen", "emissions", "sustainability", "transition", "energy"],
        "titles": ["Renewable Energy Engineer", "Solar Installer", "Wind Turbine Technician",
                   "Energy Innovation Analyst", "Grid Connection Engineer", "Battery Systems Engineer",
                   "Sustainability Specialist", "Hydrogen Project Manager", "Protection Engineer",
                   "Energy Estimator", "Emissions Analyst", "Energy Project Coordinator"],
    },
    "Market Entry": {
        "vocab": ["market", "entry", "expansion", "export", "localisation", "distributors", "tariffs", "import",
                  "international", "territory", "launch", "regulatory", "partnerships", "segmentation"],
        "titles": ["Marketplace Specialist", "Strategy Planner", "Marketing Coordinator", "Import Agent",
                   "Export Operations Specialist", "Area Sales Manager", "Market Analyst",
                   "International Expansion Manager", "Localisation Specialist", "Channel Partner Manager",
                   "Trade Compliance Officer", "Go-To-Market Manager"],
    },
    "Smart Manufacturing": {
        "vocab": ["manufacturing", "industry", "iot", "sensors", "plc", "automation", "robotics", "digital",
                  "twin", "predictive", "maintenance", "mes", "factory", "scada"],
        "titles": ["Manufacturing Engineer", "Manufacturing Planner", "Industrial Engineer",
                   "Maintenance Specialist", "Automation Engineer", "Robotics Technician", "Controls Engineer",
                   "Manufacturing System Analyst", "Reliability Engineer", "Process Engineer",
                   "Digital Twin Developer", "Plant Manager"],
    },
}

DISTRACTOR_VOCAB = [
    "bakery", "pastry", "barista", "espresso", "retail", "checkout", "warehouse", "forklift", "nursing",
    "ward", "patient", "classroom", "teacher", "curriculum", "plumbing", "pipes", "carpentry", "timber",
    "hairdressing", "salon", "driving", "delivery", "cleaning", "housekeeping", "hospitality", "reception",
    "laundry", "gardening", "landscaping", "catering",
]
DISTRACTOR_TITLES = [
    "Pastry Chef", "Barista", "Retail Assistant", "Warehouse Operative", "Forklift Driver", "Registered Nurse",
    "Primary Teacher", "Plumber", "Carpenter", "Hairdresser", "Delivery Driver", "Cleaner", "Receptionist",
    "Gardener", "Caterer",
]
FILLER = ["role", "team", "hiring", "apply", "candidate", "salary"]
SENIORITY = ["", "", "Senior ", "Lead ", "Junior ", "Principal "]
COMPANIES = ["Acme", "Beta Corp", "Orion Systems", "Kestrel Group", "Nimbus Ltd", "Vertex Partners"]
CITIES = ["Sydney", "Melbourne", "London", "Manchester", "New York", "Austin"]

RUN_CONF = """\
# planted-cohort fixture; paths are relative to this file
corpus = postings.jsonl
field_map = field_map.ini
drivers_dir = drivers
rules = rules.txt
provider = local
dimension = 512
max_tokens = 8192
threshold = 0.70
top_k = 10
parallelism = 2
out_dir = out
"""

FIELD_MAP = """\
source_id = uniq_id
title = job_title
description = job_description
company = hiringOrganization.name
location = jobLocation.city
posted_date = date_posted
url = page_url
"""

RULES = """\
# default seniority tokens plus one explicit merge
[seniority]
Senior
Lead
Junior
Principal
Head of
Chief
Staff
Associate
Graduate
Entry-Level
[merges]
Site Reliability Engineer => Site Reliability Engineers
"""


def _date(rng: random.Random) -> str:
    month = rng.randint(3, 6)
    return f"2023-{month:02d}-{rng.randint(1, 28):02d}"


def _posting(uid, title, words, company, city, rng):
    desc = " ".join(words)
    return {
        "uniq_id": uid,
        "job_title": title,
        "job_description": desc[0].upper() + desc[1:] + ".",
        "hiringOrganization": {"name": company},
        "jobLocation": {"city": city},
        "date_posted": _date(rng),
        "page_url": f"https://jobs.example.org/{uid}",
    }


def cohort_of(source_id: str) -> str:
    """Driver id a planted source id belongs to, or ``distractor``."""
    return source_id.rsplit("-", 1)[0]


def definition_text(name: str) -> str:
    vocab = COHORTS[name]["vocab"]
    return f"{' '.join(vocab[:7]).capitalize()}, {' '.join(vocab[7:])}.\n"


def generate(seed: int = SEED) -> List[dict]:
    from .ontology import slugify

    rng = random.Random(seed)
    rows = []
    for name, spec in COHORTS.items():
        did = slugify(name)
        titles, vocab = spec["titles"], spec["vocab"]
        first_company = {}
        for i in range(COHORT_SIZE):
            base = titles[i % len(titles)]
            if i >= len(titles) and rng.random() < 0.5:
                company = first_company[base]  # same employer, other city
            else:
                company = rng.choice(COMPANIES)
            first_company.setdefault(base, company)
            words = rng.sample(vocab, rng.randint(10, 14)) + rng.sample(FILLER, rng.randint(0, 2))
            rng.shuffle(words)
            rows.append(_posting(f"{did}-{i:02d}", rng.choice(SENIORITY) + base, words, company,
                                 rng.choice(CITIES), rng))
    for i in range(DISTRACTORS):
        words = rng.sample(DISTRACTOR_VOCAB, 10) + rng.sample(FILLER, 2)
        rng.shuffle(words)
        rows.append(_posting(f"distractor-{i:03d}", rng.choice(DISTRACTOR_TITLES), words, rng.choice(COMPANIES),
                             rng.choice(CITIES), rng))
    return rows


def write_planted_fixture(directory: Path | str, seed: int = SEED) -> Path:
    """Write postings.jsonl, drivers/, field_map.ini, rules.txt and run.conf."""
    d = Path(directory)
    (d / "drivers").mkdir(parents=True, exist_ok=True)
    rows = generate(seed)
    lines = [json.dumps(r, sort_keys=True) for r in rows]
    # reposts with identical content under new ids, and two broken records
    for k, j in enumerate((3, 47, 150)):
        dup = dict(rows[j], uniq_id=f"repost-{k}")
        lines.insert(j + 1 + k, json.dumps(dup, sort_keys=True))
    lines.insert(60, '{"uniq_id": "broken-0", "job_title": "Data Engineer", "job_description": ')
    lines.insert(121, json.dumps({"uniq_id": "broken-1", "job_title": "Cloud Engineer"}, sort_keys=True))
    (d / "postings.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for name in COHORTS:
        (d / "drivers" / f"{name}.txt").write_text(definition_text(name), encoding="utf-8")
    (d / "field_map.ini").write_text(FIELD_MAP, encoding="utf-8")
    (d / "rules.txt").write_text(RULES, encoding="utf-8")
    (d / "run.conf").write_text(RUN_CONF, encoding="utf-8")
    return d
