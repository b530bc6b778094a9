from setuptools import setup, find_packages
from os import path

cur_dir = path.abspath(path.dirname(__file__))

# parse requirements
with open(path.join(cur_dir, "requirements.txt"), "r") as f:
    requirements = f.read().split()

# set up additional dev requirements
dev_requirements = []
with open(path.join(cur_dir, "dev-requirements.txt"), "r") as f:
    dev_requirements = f.read().split()

setup(
    name="cuspidal",
    packages=find_packages(),
    install_requires=requirements,
    # set up development requirements
    extras_require={"dev": dev_requirements},
    include_package_data=True,
    package_data={"cuspidal": ["scenarios/*.yml", "tests/files/*"]},
    python_requires=">=3.8",
    entry_points={
        "console_scripts": [
            "cuspidal-run=cuspidal.commands.run_scenario:run",
            "cuspidal-sweep=cuspidal.commands.stage_commands:sweep",
            "cuspidal-scan=cuspidal.commands.stage_commands:scan",
            "cuspidal-residues=cuspidal.commands.stage_commands:residues",
            "cuspidal-ms=cuspidal.commands.stage_commands:ms",
            "cuspidal-classify=cuspidal.commands.stage_commands:classify",
        ]
    },
)
