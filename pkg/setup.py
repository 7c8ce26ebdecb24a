from setuptools import setup, find_packages

with open('requirements.txt', encoding='utf-8') as f:
    requirements = [line.strip() for line in f if line.strip() and not line.startswith('#') and not line.startswith('pytest')]

setup(
    name='ecgfreq',
    version='0.3.0',
    packages=find_packages(exclude=['tests']),
    install_requires=requirements,
    python_requires='>=3.10',
    entry_points={'console_scripts': ['ecgfreq=ecgfreq.cli:main']},
)
