from setuptools import setup


def readme():
    with open("README.md") as f:
        return f.read()


setup(
    name="vtid",
    version="0.1.0",  # Matches __init__.py
    description=("Identify encrypted video traffic from flow statistics with "
                 "peak-point features and distribution-distance feature "
                 "selection"),
    long_description=readme(),
    long_description_content_type="text/markdown",
    install_requires=[
        "dpkt>=1.9",
        "numpy>=1.16",
        "pandas>=1.0",
        "scipy>=1.4",
    ],
    extras_require={
        "dev": ["pytest", "yapf", "POT", "scikit-learn"],
    },
    license="MIT",
    keywords="traffic classification feature selection pcap",
    packages=["vtid"],
    scripts=["bin/vtid"],
)
