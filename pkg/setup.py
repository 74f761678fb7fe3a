"""
rpdp-fl
=======

Record-level personalized differential privacy for federated learning:

- An RDP accountant for two-stage (client, then record) Poisson sampling.

- The Simulation-CurveFitting estimator that maps per-record budgets to
  sampling probabilities, and a federated simulator that uses it.

"""

import os
import re
import setuptools  # pylint: disable=E0401

REQUIREMENT = re.compile(r"([a-zA-Z0-9-_.]+)([<>=][^#\s]+)?")


def is_requirement(line):
    """True for a package line; False for blanks, comments and pip options."""
    line = line.strip()
    return bool(line) and not line.startswith(("-", "#", "git+"))


def load_requirements(path):
    """
    The packages named in a requirements .in file, with the version bounds of
    any `-c` constraint file it pulls in applied to them.
    """
    packages = {}
    constraint_files = []
    with open(path, encoding="utf-8") as reqs:
        for line in reqs:
            if is_requirement(line):
                packages[REQUIREMENT.match(line.strip()).group(1)] = ""
            elif line.startswith("-c "):
                constraint_files.append(os.path.join(os.path.dirname(path), line[2:].split("#")[0].strip()))

    for constraint_file in constraint_files:
        with open(constraint_file, encoding="utf-8") as constraints:
            for line in constraints:
                if not is_requirement(line):
                    continue
                package, bound = REQUIREMENT.match(line.strip()).groups()
                if package in packages and bound:
                    if packages[package] and packages[package] != bound:
                        raise ValueError(f"conflicting constraints for {package}: {packages[package]} and {bound}")
                    packages[package] = bound
    return [f"{package}{bound}" for package, bound in sorted(packages.items())]


def get_version(*file_paths):
    """
    Extract the version string from the file at the given relative path fragments.
    """
    filename = os.path.join(os.path.dirname(__file__), *file_paths)
    with open(filename, encoding='utf-8') as opened_file:
        version_match = re.search(r"^__version__ = ['\"]([^'\"]*)['\"]", opened_file.read(), re.M)
    if version_match:
        return version_match.group(1)
    raise RuntimeError('Unable to find version string.')


setuptools.setup(
    version=get_version("rpdp_fl", "__init__.py"),
    include_package_data=True,
    install_requires=load_requirements("requirements/base.in"),
)
